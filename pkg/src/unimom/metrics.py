"""Performance statistics for daily return series.

Annualization uses 252 days.  Volatility is the population standard
deviation.  The Sortino denominator is the root mean square of min(r, 0)
over *all* days with a zero MAR; numerator and denominator annualize by the
same linear factor, so the reported ratio equals the daily one.  Max
drawdown compounds net simple returns from an initial equity of 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ANNUALIZATION_DAYS", "MetricSummary", "summarize",
           "cumulative_returns", "max_drawdown"]

ANNUALIZATION_DAYS = 252
_DOWNSIDE_FLOOR = 1e-12


@dataclass(frozen=True)
class MetricSummary:
    label: str
    ann_return_pct: float
    ann_vol_pct: float
    sharpe: float
    sortino: float
    max_dd_pct: float


def max_drawdown(returns: np.ndarray) -> float:
    """Largest peak-to-trough equity decline, as a non-positive fraction."""
    equity = np.cumprod(1.0 + np.asarray(returns, dtype=np.float64))
    peaks = np.maximum.accumulate(np.concatenate([[1.0], equity]))[1:]
    return float(np.min(equity / peaks - 1.0)) if equity.size else 0.0


def cumulative_returns(returns: np.ndarray) -> np.ndarray:
    """Compounded cumulative return path, as fractions of initial equity."""
    return np.cumprod(1.0 + np.asarray(returns, dtype=np.float64)) - 1.0


def summarize(label: str, returns) -> MetricSummary:
    returns = np.asarray(returns, dtype=np.float64)
    if returns.size < 2:
        raise ValueError(f"need at least 2 returns to summarize, got {returns.size}")
    mu = float(returns.mean())
    sigma = float(returns.std())
    ann_return = mu * ANNUALIZATION_DAYS
    ann_vol = sigma * math.sqrt(ANNUALIZATION_DAYS)
    sharpe = 0.0 if ann_vol == 0.0 else ann_return / ann_vol
    downside = math.sqrt(float(np.mean(np.minimum(returns, 0.0) ** 2)))
    sortino = mu / max(downside, _DOWNSIDE_FLOOR)
    return MetricSummary(label,
                         ann_return_pct=ann_return * 100.0,
                         ann_vol_pct=ann_vol * 100.0,
                         sharpe=sharpe,
                         sortino=sortino,
                         max_dd_pct=max_drawdown(returns) * 100.0)
