"""Training objectives: per-horizon RMSE, Sharpe, soft-capped Sharpe, and the
combined loss evaluated through the model graph.

The soft cap follows the published piecewise form verbatim by default:

    U   = min(SR, tau)          U_e = max(SR - tau, 0)
    L   = max(U, -tau)          L_e = min(SR - tau, 0)
    loss = -(L + ln(1 + U_e) - ln(1 - L_e))

Note the lower excess uses SR - tau, not SR + tau, which makes the map
asymmetric and steeper than slope 1 inside (-tau, tau).  The likely-intended
symmetric variant (L_e = min(SR + tau, 0), linear with slope 1 on the capped
band and |slope| <= 1 everywhere) is available behind ``symmetric_lower``;
the published form stays the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import TASKS, MmoeModel

__all__ = ["SHARPE_STD_FLOOR", "SoftCapParams", "DateGroup", "BatchWindow",
           "rmse_loss", "sharpe_loss", "soft_capped_sharpe", "soft_cap_value",
           "batch_outputs", "total_loss"]

SHARPE_STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SoftCapParams:
    tau: float = 0.01
    symmetric_lower: bool = False

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")


@dataclass
class DateGroup:
    """A run of consecutive batch dates sharing one active-asset set."""

    dates: list
    asset_indices: np.ndarray
    sequences: np.ndarray      # (len(dates) * n_assets, seq_len, 7)
    targets: np.ndarray        # (len(dates), n_assets, 3)
    next_returns: np.ndarray   # (len(dates), n_assets) simple returns


@dataclass
class BatchWindow:
    """A contiguous span of eligible trading dates, grouped rectangularly."""

    dates: list
    groups: list = field(default_factory=list)

    @property
    def n_dates(self) -> int:
        return len(self.dates)


def rmse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over dates of the per-date cross-sectional RMSE.

    ``pred`` is (dates x assets); the inner reduction is a root mean square
    over assets, the outer a plain mean over the batch dates.
    """
    if pred.data.size == 0:
        raise ValueError("no valid prediction/target pairs")
    if pred.data.shape != target.shape:
        raise ValueError(f"pred {pred.data.shape} vs target {target.shape}")
    err = ad.sub(pred, Tensor(target))
    per_date = ad.sqrt(ad.mean(ad.mul(err, err), axis=1))
    return ad.mean(per_date)


def _sharpe_ratio(returns: Tensor) -> Tensor:
    if returns.data.size < 2:
        raise ValueError(f"need at least 2 returns, got {returns.data.size}")
    mu = ad.mean(returns)
    sigma = ad.maximum(ad.std(returns), SHARPE_STD_FLOOR)
    return ad.div(mu, sigma)


def sharpe_loss(returns: Tensor) -> Tensor:
    """Negative mean/std of the daily returns, population std, no annualizing."""
    return ad.neg(_sharpe_ratio(returns))


def soft_capped_sharpe(returns: Tensor, params: SoftCapParams = SoftCapParams()) -> Tensor:
    """Sharpe loss passed through the soft cap (see module docstring)."""
    sr = _sharpe_ratio(returns)
    tau = params.tau
    upper = ad.minimum(sr, tau)
    upper_excess = ad.maximum(ad.sub(sr, tau), 0.0)
    lower = ad.maximum(upper, -tau)
    lower_arg = ad.add(sr, tau) if params.symmetric_lower else ad.sub(sr, tau)
    lower_excess = ad.minimum(lower_arg, 0.0)
    capped = ad.sub(ad.add(lower, ad.log(ad.add(upper_excess, 1.0))),
                    ad.log(ad.sub(1.0, lower_excess)))
    return ad.neg(capped)


def soft_cap_value(sr: float, tau: float = 0.01, symmetric_lower: bool = False) -> float:
    """Scalar view of the soft-capped loss as a function of the Sharpe ratio."""
    upper = min(sr, tau)
    upper_excess = max(sr - tau, 0.0)
    lower = max(upper, -tau)
    lower_excess = min((sr + tau) if symmetric_lower else (sr - tau), 0.0)
    return -(lower + math.log1p(upper_excess) - math.log(1.0 - lower_excess))


def batch_outputs(model: MmoeModel, batch: BatchWindow, score_override=None):
    """Run the model over every group of a batch window.

    Returns per-task score tensors (one per group, in date order), the
    matching target/return arrays, and the date-ordered unified portfolio
    return series as a (n_dates, 1) tensor.
    """
    if not batch.groups:
        raise ValueError("empty batch window")
    group_scores = []
    unified_parts = []
    for group in batch.groups:
        n_dates = len(group.dates)
        n_assets = len(group.asset_indices)
        scores, weights = model.forward_group(group.sequences, n_dates, n_assets,
                                              score_override=score_override)
        task_rets = []
        for task in TASKS:
            r = ad.mean(ad.mul(scores[task], Tensor(group.next_returns)),
                        axis=1, keepdims=True)
            task_rets.append(r)
        unified = None
        for k, r in enumerate(task_rets):
            part = ad.mul(weights[:, k:k + 1], r)
            unified = part if unified is None else ad.add(unified, part)
        group_scores.append(scores)
        unified_parts.append(unified)
    unified_returns = (unified_parts[0] if len(unified_parts) == 1
                       else ad.concat(unified_parts, axis=0))
    return group_scores, unified_returns


def total_loss(model: MmoeModel, batch: BatchWindow,
               cap: SoftCapParams = SoftCapParams(),
               variant: str = "softcap", score_override=None):
    """Unified-return objective plus the three per-horizon RMSE terms.

    ``variant`` selects the first term: ``softcap`` (default) or plain
    ``sharpe`` for the ablation run.  Returns (loss tensor, parts dict of
    float component values).
    """
    if variant not in ("softcap", "sharpe"):
        raise ValueError(f"unknown loss variant {variant!r}")
    group_scores, unified = batch_outputs(model, batch, score_override=score_override)
    if variant == "softcap":
        risk_term = soft_capped_sharpe(unified, cap)
    else:
        risk_term = sharpe_loss(unified)
    loss = risk_term
    parts = {"risk": float(risk_term.data)}
    for k, task in enumerate(TASKS):
        per_group = []
        for scores, group in zip(group_scores, batch.groups):
            err = ad.sub(scores[task], Tensor(group.targets[:, :, k]))
            per_group.append(ad.sqrt(ad.mean(ad.mul(err, err), axis=1)))
        stacked = per_group[0] if len(per_group) == 1 else ad.concat(per_group, axis=0)
        term = ad.mean(stacked)
        parts[f"rmse_{task}"] = float(term.data)
        loss = ad.add(loss, term)
    parts["total"] = float(loss.data)
    return loss, parts
