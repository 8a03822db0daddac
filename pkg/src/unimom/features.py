"""Volatility-normalized momentum features.

For each lookback d in {3, 5, 10, 21, 63, 126, 252} the feature is the d-day
log return divided by (trailing d-day daily volatility * sqrt(d)), clipped to
[-5, 5].  The sqrt(d) factor rescales daily volatility to the d-day horizon,
so each feature is a z-score-like quantity at its own timescale.  A (date,
asset) cell is valid only once the asset has 252 prior valid prices, so all
seven lookbacks coexist.
"""

from __future__ import annotations

import numpy as np

from .data import PricePanel, ReturnPanel, log_returns

__all__ = ["LOOKBACKS", "MIN_HISTORY", "FEATURE_CLIP", "VOL_FLOOR",
           "VolEstimate", "FeaturePanel", "rolling_population_std",
           "trailing_vol", "momentum_features"]

LOOKBACKS = (3, 5, 10, 21, 63, 126, 252)
MIN_HISTORY = 252
FEATURE_CLIP = 5.0
VOL_FLOOR = 1e-8


class VolEstimate:
    """Trailing-window population standard deviation of daily returns."""

    def __init__(self, calendar, sigma, valid, window):
        self.calendar = list(calendar)
        self.sigma = np.asarray(sigma, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        self.window = window


class FeaturePanel:
    """(date x asset x lookback) feature array with a per-(date, asset) mask."""

    def __init__(self, calendar, features, valid):
        self.calendar = list(calendar)
        self.features = np.asarray(features, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        self._date_index = {d: i for i, d in enumerate(self.calendar)}

    def date_index(self, d) -> int:
        return self._date_index[d]


def rolling_population_std(values: np.ndarray, valid: np.ndarray, window: int):
    """Trailing-window population std per column via prefix sums.

    Columns are shifted by their global mean first, which keeps the
    ``E[x^2] - E[x]^2`` form well conditioned when a column's drift dominates
    its dispersion (the shift cancels exactly in the variance).  Returns
    (sigma, full) where ``full`` marks windows with all entries valid; rows
    before the first full window are zero/False.
    """
    n_dates, n_assets = values.shape
    sigma = np.zeros((n_dates, n_assets))
    full = np.zeros((n_dates, n_assets), dtype=bool)
    if n_dates < window:
        return sigma, full
    counts = valid.sum(axis=0)
    shift = np.divide(np.where(valid, values, 0.0).sum(axis=0),
                      np.maximum(counts, 1))
    x = np.where(valid, values - shift, 0.0)
    c1 = np.vstack([np.zeros((1, n_assets)), np.cumsum(x, axis=0)])
    c2 = np.vstack([np.zeros((1, n_assets)), np.cumsum(x * x, axis=0)])
    cn = np.vstack([np.zeros((1, n_assets), dtype=int),
                    np.cumsum(valid.astype(int), axis=0)])
    s1 = c1[window:] - c1[:-window]
    s2 = c2[window:] - c2[:-window]
    count = cn[window:] - cn[:-window]
    ok = count == window
    m = s1 / window
    var = np.maximum(s2 / window - m * m, 0.0)
    sigma[window - 1:][ok] = np.sqrt(var[ok])
    full[window - 1:] = ok
    return sigma, full


def trailing_vol(returns: ReturnPanel, window: int) -> VolEstimate:
    """Population std of the last ``window`` daily returns ending at t.

    Valid only where all window returns are valid; the estimate is floored at
    1e-8 so it can safely sit in a denominator.
    """
    if window < 3:
        raise ValueError(f"window must be >= 3, got {window}")
    sigma, valid = rolling_population_std(returns.returns, returns.valid, window)
    sigma = np.maximum(sigma, VOL_FLOOR)
    return VolEstimate(returns.calendar, sigma, valid, window)


def momentum_features(panel: PricePanel) -> FeaturePanel:
    """Build the 7-lookback feature panel from prices."""
    n_dates, n_assets = panel.prices.shape
    if n_dates < MIN_HISTORY + 1:
        raise ValueError(
            f"panel too short for features: {n_dates} dates, need {MIN_HISTORY + 1}")
    daily = log_returns(panel, 1)
    feats = np.zeros((n_dates, n_assets, len(LOOKBACKS)))
    valid = np.ones((n_dates, n_assets), dtype=bool)
    for k, d in enumerate(LOOKBACKS):
        rd = log_returns(panel, d)
        vol = trailing_vol(daily, d)
        raw = rd.returns / (vol.sigma * np.sqrt(d))
        feats[:, :, k] = np.clip(raw, -FEATURE_CLIP, FEATURE_CLIP)
        valid &= rd.valid & vol.valid
    history_ok = np.zeros((n_dates, n_assets), dtype=bool)
    for j in range(n_assets):
        first = panel.first_valid_index(j)
        if first is not None and first + MIN_HISTORY < n_dates:
            col = np.zeros(n_dates, dtype=bool)
            col[first + MIN_HISTORY:] = True
            history_ok[:, j] = col & panel.valid[:, j]
    valid &= history_ok
    feats[~valid] = 0.0
    return FeaturePanel(panel.calendar, feats, valid)
