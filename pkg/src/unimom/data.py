"""Continuous-futures price panels: loading, saving, returns, synthesis.

The canonical interchange file is UTF-8 CSV with header ``date,asset,settle``,
ISO dates and decimal settles, sorted by asset then date.  A per-asset layout
(one ``date,settle`` file per contract, asset name taken from the file stem)
is also accepted on ingest.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
import os
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ASSET_CLASSES",
    "Asset",
    "PricePanel",
    "ReturnPanel",
    "load_panel",
    "save_panel",
    "log_returns",
    "simple_returns",
    "synthesize_panel",
]

ASSET_CLASSES = ("commodity", "currency", "fixed-income", "equity-index")


@dataclass(frozen=True)
class Asset:
    name: str
    asset_class: str = "commodity"


class PricePanel:
    """Calendar-aligned back-adjusted settlement prices.

    ``prices`` is (dates x assets); ``valid`` marks cells where the contract
    actually traded.  Valid prices are strictly positive and each asset's
    valid region is one contiguous run of dates (interior gaps are a data
    error and rejected at construction).  Instances are treated as immutable
    after construction and are safe to share across threads.
    """

    def __init__(self, assets, calendar, prices, valid):
        self.assets = list(assets)
        self.calendar = list(calendar)
        self.prices = np.asarray(prices, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        self._validate()
        self._date_index = {d: i for i, d in enumerate(self.calendar)}

    def _validate(self):
        n_dates, n_assets = self.prices.shape
        if len(self.calendar) != n_dates or len(self.assets) != n_assets:
            raise ValueError("panel dimensions do not match calendar/assets")
        for prev, cur in zip(self.calendar, self.calendar[1:]):
            if cur <= prev:
                raise ValueError(f"calendar not strictly increasing at {cur}")
        if np.any(self.prices[self.valid] <= 0.0):
            raise ValueError("valid prices must be strictly positive")
        for j, asset in enumerate(self.assets):
            col = self.valid[:, j]
            idx = np.flatnonzero(col)
            if idx.size and (idx[-1] - idx[0] + 1) != idx.size:
                raise ValueError(f"asset {asset.name} has an interior gap in its history")

    @property
    def asset_names(self):
        return [a.name for a in self.assets]

    @property
    def n_assets(self):
        return len(self.assets)

    @property
    def n_dates(self):
        return len(self.calendar)

    def date_index(self, d) -> int:
        return self._date_index[d]

    def first_valid_index(self, j: int):
        idx = np.flatnonzero(self.valid[:, j])
        return int(idx[0]) if idx.size else None

    def truncate_after(self, d) -> "PricePanel":
        """The panel restricted to dates <= d."""
        if d not in self._date_index:
            raise ValueError(f"{d} not in panel calendar")
        cut = self._date_index[d] + 1
        return PricePanel(self.assets, self.calendar[:cut],
                          self.prices[:cut].copy(), self.valid[:cut].copy())


class ReturnPanel:
    """Daily (or d-day) returns aligned to a price panel's calendar."""

    def __init__(self, calendar, returns, valid, kind="log", lookback=1):
        self.calendar = list(calendar)
        self.returns = np.asarray(returns, dtype=np.float64)
        self.valid = np.asarray(valid, dtype=bool)
        self.kind = kind
        self.lookback = lookback


def _parse_rows(path, rows, classes):
    """rows: iterable of (rownum, date_str, asset, settle_str)."""
    seen = {}
    for rownum, date_str, asset, settle_str in rows:
        try:
            d = dt.date.fromisoformat(date_str.strip())
        except ValueError:
            raise ValueError(f"{path}: row {rownum}: unparseable date {date_str!r}")
        try:
            price = float(settle_str)
        except ValueError:
            raise ValueError(f"{path}: row {rownum}: unparseable settle {settle_str!r}")
        if price <= 0.0:
            raise ValueError(f"{path}: row {rownum}: non-positive price {price}")
        key = (d, asset)
        if key in seen:
            raise ValueError(f"{path}: row {rownum}: duplicate entry for {asset} on {d}")
        seen[key] = price
    return seen


def load_panel(path, layout: str = "long", classes=None) -> PricePanel:
    """Read prices into a panel over the union trading calendar.

    ``layout='long'`` expects one CSV with header date,asset,settle;
    ``layout='per-asset'`` expects a directory of ``<asset>.csv`` files with
    header date,settle.  Cells absent from an asset's file are masked
    invalid.  Assets are sorted lexicographically for determinism.  ``classes``
    optionally maps asset name to an asset-class tag (default commodity).
    """
    classes = classes or {}
    cells = {}
    if layout == "long":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != ["date", "asset", "settle"]:
                raise ValueError(f"{path}: expected header date,asset,settle")
            rows = ((i, r[0], r[1].strip(), r[2])
                    for i, r in enumerate(reader, start=2))
            cells = _parse_rows(path, rows, classes)
    elif layout == "per-asset":
        names = sorted(f for f in os.listdir(path) if f.endswith(".csv"))
        if not names:
            raise ValueError(f"{path}: no .csv files found")
        for name in names:
            asset = os.path.splitext(name)[0]
            fpath = os.path.join(path, name)
            with open(fpath, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                header = next(reader, None)
                if header is None or [h.strip() for h in header] != ["date", "settle"]:
                    raise ValueError(f"{fpath}: expected header date,settle")
                rows = ((i, r[0], asset, r[1]) for i, r in enumerate(reader, start=2))
                cells.update(_parse_rows(fpath, rows, classes))
    else:
        raise ValueError(f"unknown layout {layout!r}")

    if not cells:
        raise ValueError(f"{path}: no price rows")
    calendar = sorted({d for d, _ in cells})
    asset_names = sorted({a for _, a in cells})
    assets = [Asset(a, classes.get(a, "commodity")) for a in asset_names]
    prices = np.zeros((len(calendar), len(assets)))
    valid = np.zeros_like(prices, dtype=bool)
    date_idx = {d: i for i, d in enumerate(calendar)}
    asset_idx = {a: j for j, a in enumerate(asset_names)}
    for (d, a), price in cells.items():
        i, j = date_idx[d], asset_idx[a]
        prices[i, j] = price
        valid[i, j] = True
    return PricePanel(assets, calendar, prices, valid)


def save_panel(panel: PricePanel, path):
    """Write the canonical long CSV; floats use shortest round-trip repr."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "asset", "settle"])
        for j, asset in enumerate(panel.assets):
            col = panel.valid[:, j]
            for i in np.flatnonzero(col):
                writer.writerow([panel.calendar[i].isoformat(), asset.name,
                                 repr(float(panel.prices[i, j]))])


def log_returns(panel: PricePanel, d: int = 1) -> ReturnPanel:
    """d-day log returns ln(P_t / P_{t-d}); valid only when both ends are."""
    if d < 1:
        raise ValueError(f"lookback must be >= 1, got {d}")
    n_dates, n_assets = panel.prices.shape
    rets = np.zeros((n_dates, n_assets))
    valid = np.zeros((n_dates, n_assets), dtype=bool)
    if d < n_dates:
        both = panel.valid[d:] & panel.valid[:-d]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.log(panel.prices[d:] / panel.prices[:-d])
        rets[d:][both] = r[both]
        valid[d:] = both
    return ReturnPanel(panel.calendar, rets, valid, kind="log", lookback=d)


def simple_returns(panel: PricePanel) -> ReturnPanel:
    """One-day simple returns P_t/P_{t-1} - 1, used for portfolio arithmetic."""
    n_dates, n_assets = panel.prices.shape
    rets = np.zeros((n_dates, n_assets))
    valid = np.zeros((n_dates, n_assets), dtype=bool)
    if n_dates > 1:
        both = panel.valid[1:] & panel.valid[:-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = panel.prices[1:] / panel.prices[:-1] - 1.0
        rets[1:][both] = r[both]
        valid[1:] = both
    return ReturnPanel(panel.calendar, rets, valid, kind="simple", lookback=1)


def trading_calendar(start_year: int, years: int, days_per_year: int = 252):
    """First ``days_per_year`` weekdays of each calendar year, no holidays."""
    calendar = []
    for year in range(start_year, start_year + years):
        d = dt.date(year, 1, 1)
        count = 0
        while count < days_per_year:
            if d.weekday() < 5:
                calendar.append(d)
                count += 1
            d += dt.timedelta(days=1)
    return calendar


def _default_regimes(rng, n_assets, n_days):
    """Persistent planted drifts, alternating sign, one segment per asset."""
    regimes = []
    for i in range(n_assets):
        drift = rng.uniform(8e-4, 1.6e-3) * (1 if i % 2 == 0 else -1)
        vol = rng.uniform(0.007, 0.013)
        regimes.append([(drift, vol, n_days)])
    return regimes


def synthesize_panel(seed: int, n_assets: int, years: int, regimes=None,
                     start_year: int = 1990) -> PricePanel:
    """Geometric random walks on a synthetic trading calendar.

    ``regimes`` gives, per asset, a list of (drift per day, vol per day,
    length in days) segments applied to the log price in order; the last
    segment is extended if the segments do not cover the calendar.  Without
    an explicit spec, each asset gets one persistent drift segment drawn from
    the seed (planted trends).  Deterministic for a given seed.
    """
    if n_assets < 1:
        raise ValueError("need at least one asset")
    calendar = trading_calendar(start_year, years)
    n_days = len(calendar)
    rng = np.random.default_rng(seed)
    if regimes is None:
        regimes = _default_regimes(rng, n_assets, n_days)
    if len(regimes) != n_assets:
        raise ValueError(f"regime spec covers {len(regimes)} assets, need {n_assets}")

    prices = np.zeros((n_days, n_assets))
    for j in range(n_assets):
        drifts = np.empty(n_days)
        vols = np.empty(n_days)
        pos = 0
        for drift, vol, length in regimes[j]:
            if vol < 0:
                raise ValueError(f"negative volatility {vol} for asset {j}")
            hi = min(n_days, pos + int(length))
            drifts[pos:hi] = drift
            vols[pos:hi] = vol
            pos = hi
            if pos >= n_days:
                break
        if pos < n_days:
            drifts[pos:] = regimes[j][-1][0]
            vols[pos:] = regimes[j][-1][1]
        shocks = rng.standard_normal(n_days)
        logp = math.log(100.0) + np.cumsum(drifts + vols * shocks)
        prices[:, j] = np.exp(logp)

    assets = [Asset(f"SYN{j:03d}", ASSET_CLASSES[j % len(ASSET_CLASSES)])
              for j in range(n_assets)]
    valid = np.ones((n_days, n_assets), dtype=bool)
    return PricePanel(assets, calendar, prices, valid)
