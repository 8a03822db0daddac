"""End-to-end gradient validation on a deterministic toy problem.

Builds a small synthetic panel, a two-expert model, and a single training
batch, then compares every taped parameter gradient of the combined loss
against central finite differences.
"""

from __future__ import annotations

import numpy as np

from .data import synthesize_panel, simple_returns
from .features import momentum_features
from .losses import BatchWindow, DateGroup, SoftCapParams, total_loss
from .model import MmoeConfig, init_model
from .optim import finite_diff_check
from .targets import build_targets

__all__ = ["build_toy_batch", "toy_gradient_check"]


def build_toy_batch(panel, seq_len: int, batch_days: int) -> BatchWindow:
    """One rectangular batch over the first eligible stretch of the panel."""
    feats = momentum_features(panel)
    tgts = build_targets(panel)
    srets = simple_returns(panel)
    srets_arr = np.where(srets.valid, srets.returns, 0.0)
    anchors = []
    for it in range(seq_len - 1, panel.n_dates - 1):
        start = it - seq_len + 1
        ok = (feats.valid[it] & feats.valid[start] & srets.valid[it + 1]
              & tgts.valid[it].all(axis=-1))
        if ok.all():
            anchors.append(it)
            if len(anchors) == batch_days:
                break
    if len(anchors) < batch_days:
        raise ValueError(f"only {len(anchors)} eligible days, need {batch_days}")
    anchors = np.asarray(anchors, dtype=int)
    assets = np.arange(panel.n_assets)
    n_assets = len(assets)
    seqs = np.empty((batch_days * n_assets, seq_len, feats.features.shape[2]))
    for q, it in enumerate(anchors):
        block = feats.features[it - seq_len + 1:it + 1][:, assets, :]
        seqs[q * n_assets:(q + 1) * n_assets] = block.transpose(1, 0, 2)
    group = DateGroup([panel.calendar[i] for i in anchors], assets, seqs,
                      tgts.targets[anchors][:, assets, :],
                      srets_arr[anchors + 1][:, assets])
    return BatchWindow(dates=group.dates, groups=[group])


def toy_gradient_check(seed: int = 7, n_assets: int = 4, seq_len: int = 10,
                       batch_days: int = 30, h: float = 1e-5,
                       variant: str = "softcap") -> float:
    """Max relative gradient error of the full loss on the toy setup."""
    panel = synthesize_panel(seed, n_assets, years=2)
    batch = build_toy_batch(panel, seq_len, batch_days)
    config = MmoeConfig(n_experts=2, lstm_layers=1, lstm_hidden=8,
                        task_layers=2, task_hidden=8,
                        sequence_length=seq_len, seed=seed)
    model = init_model(config, strict=False)
    cap = SoftCapParams()

    def objective():
        loss, _ = total_loss(model, batch, cap, variant)
        return loss

    return finite_diff_check(objective, list(model.params.values()), h=h)
