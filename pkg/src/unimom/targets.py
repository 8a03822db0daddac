"""Forward-looking momentum regression targets.

The target at (t, asset, horizon s) is the forward log return over the next
s trading days divided by the realized population volatility of those same s
daily returns, floored at 1e-8 and clipped to [-10, 10].  Targets exist only
where every price in (t, t+s] is valid, so they are usable for training and
validation but never as inference-time inputs.
"""

from __future__ import annotations

import numpy as np

from .data import PricePanel, log_returns
from .features import rolling_population_std

__all__ = ["HORIZONS", "TARGET_CLIP", "TargetSlice", "TargetPanel",
           "forward_tsmom", "build_targets"]

HORIZONS = (20, 60, 120)
TARGET_CLIP = 10.0
_VOL_FLOOR = 1e-8


class TargetSlice:
    def __init__(self, calendar, target, valid, horizon):
        self.calendar = list(calendar)
        self.target = np.asarray(target, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        self.horizon = horizon


class TargetPanel:
    """All three horizons stacked: (date x asset x horizon)."""

    def __init__(self, calendar, targets, valid):
        self.calendar = list(calendar)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)


def forward_tsmom(panel: PricePanel, s: int) -> TargetSlice:
    """Vol-scaled forward return over the next s trading days."""
    if s not in HORIZONS:
        raise ValueError(f"horizon must be one of {HORIZONS}, got {s}")
    n_dates, n_assets = panel.prices.shape
    daily = log_returns(panel, 1)
    target = np.zeros((n_dates, n_assets))
    valid = np.zeros((n_dates, n_assets), dtype=bool)
    if n_dates > s:
        # forward return over (t, t+s] and realized std of its s daily legs;
        # the trailing window ending at t+s is exactly that forward window
        x = np.where(daily.valid, daily.returns, 0.0)
        c1 = np.vstack([np.zeros((1, n_assets)), np.cumsum(x, axis=0)])
        fwd_sum = c1[s + 1:] - c1[1:-s]
        sigma_trail, full_trail = rolling_population_std(daily.returns,
                                                         daily.valid, s)
        sigma = np.maximum(sigma_trail[s:], _VOL_FLOOR)
        full = full_trail[s:]
        raw = np.clip(fwd_sum / sigma, -TARGET_CLIP, TARGET_CLIP)
        anchor = slice(0, n_dates - s)
        target[anchor][full] = raw[full]
        valid[anchor] = full & panel.valid[anchor]
    return TargetSlice(panel.calendar, target, valid, s)


def build_targets(panel: PricePanel) -> TargetPanel:
    n_dates, n_assets = panel.prices.shape
    targets = np.zeros((n_dates, n_assets, len(HORIZONS)))
    valid = np.zeros((n_dates, n_assets, len(HORIZONS)), dtype=bool)
    for k, s in enumerate(HORIZONS):
        sl = forward_tsmom(panel, s)
        targets[:, :, k] = sl.target
        valid[:, :, k] = sl.valid
    return TargetPanel(panel.calendar, targets, valid)
