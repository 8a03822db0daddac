"""Portfolio arithmetic, classical momentum benchmarks, and cost accounting.

Conventions used throughout:

* A weight dated t is the position held over (t-1, t]; it was computed from
  information available at the close of t-1 and earns the simple return
  dated t.  Position scores live in [-1, 1] per asset.
* The asset-level *book* divides scores by the day's active-asset count, so
  a strategy's gross return is simply ``sum(book * returns)`` row by row and
  turnover/cost accounting acts on actual capital fractions.
* Portfolio compounding uses simple returns; log returns appear only inside
  features and targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PricePanel, ReturnPanel, log_returns, simple_returns
from .features import rolling_population_std

__all__ = [
    "WeightPanel", "AllocationSeries", "StrategyReturns",
    "book_weights", "task_portfolio_return", "unified_return",
    "tsmom_weights", "combo_tsmom", "eqwt_combine",
    "max_sharpe_simplex", "mvo_combine", "apply_costs",
]

SIGMA_TARGET_DEFAULT = 0.15
TSMOM_VOL_WINDOW = 63
DAYS_PER_MONTH = 21
ANNUALIZATION_DAYS = 252


@dataclass
class WeightPanel:
    """Per-asset position scores for one strategy, with an active mask."""

    label: str
    dates: list
    assets: list
    weights: np.ndarray   # (dates x assets), zero where inactive
    valid: np.ndarray     # (dates x assets) bool

    def active_counts(self) -> np.ndarray:
        return self.valid.sum(axis=1)


@dataclass
class AllocationSeries:
    """Daily simplex weights over the fast/medium/slow sub-portfolios."""

    dates: list
    weights: np.ndarray   # (dates x 3)


@dataclass
class StrategyReturns:
    label: str
    dates: list
    gross: np.ndarray
    net: np.ndarray
    turnover: np.ndarray
    cost_rate: float


def book_weights(panel: WeightPanel) -> np.ndarray:
    """Capital fraction per asset: score / active count, zero when inactive."""
    counts = panel.active_counts().astype(float)
    counts[counts == 0] = 1.0
    book = np.where(panel.valid, panel.weights, 0.0) / counts[:, None]
    return book


def _gross_from_book(book: np.ndarray, dates, rets: ReturnPanel) -> np.ndarray:
    idx = [rets.calendar.index(d) for d in dates] if list(rets.calendar) != list(dates) else None
    if idx is None:
        r = np.where(rets.valid, rets.returns, 0.0)
    else:
        r = np.where(rets.valid, rets.returns, 0.0)[idx]
    return (book * r).sum(axis=1)


def task_portfolio_return(weights: WeightPanel, rets: ReturnPanel) -> StrategyReturns:
    """Equal-split gross return: mean over active assets of score * return."""
    book = book_weights(weights)
    gross = _gross_from_book(book, weights.dates, rets)
    zero = np.zeros_like(gross)
    return StrategyReturns(weights.label, list(weights.dates), gross,
                           gross.copy(), zero, 0.0)


def unified_return(alloc: AllocationSeries, task_returns) -> StrategyReturns:
    """Allocation-weighted sum of the three sub-portfolio return series."""
    fast, medium, slow = task_returns
    for other in (medium, slow):
        if other.dates != fast.dates:
            raise ValueError("task return calendars are misaligned")
    if alloc.dates != fast.dates:
        raise ValueError("allocation calendar misaligned with task returns")
    stacked = np.column_stack([fast.gross, medium.gross, slow.gross])
    gross = (alloc.weights * stacked).sum(axis=1)
    zero = np.zeros_like(gross)
    return StrategyReturns("unified", list(fast.dates), gross, gross.copy(), zero, 0.0)


def eqwt_combine(task_returns) -> StrategyReturns:
    """Fixed one-third allocation to each sub-portfolio."""
    fast = task_returns[0]
    alloc = AllocationSeries(list(fast.dates),
                             np.full((len(fast.dates), 3), 1.0 / 3.0))
    out = unified_return(alloc, task_returns)
    out.label = "eqwt"
    return out


def tsmom_weights(panel: PricePanel, k: int, sigma_target: float = SIGMA_TARGET_DEFAULT,
                  vol_window: int = TSMOM_VOL_WINDOW, dates=None) -> WeightPanel:
    """Classical trend rule: sign of the past k-month return, vol-targeted.

    A month is 21 trading days.  The position sign is +1 when the trailing
    k-month log return is >= 0 (flat histories count as up), scaled by
    min(sigma_target / annualized 63-day vol, 1) so no asset is levered past
    1.  The weight dated t is formed from data through t-1.
    """
    if not (1 <= k <= 12):
        raise ValueError(f"lookback months must be in 1..12, got {k}")
    lookback = DAYS_PER_MONTH * k
    daily = log_returns(panel, 1)
    mom = log_returns(panel, lookback)
    sigma, vol_ok = rolling_population_std(daily.returns, daily.valid, vol_window)
    vol = sigma * np.sqrt(ANNUALIZATION_DAYS)

    if dates is None:
        dates = panel.calendar[1:]
    weights = np.zeros((len(dates), n_assets))
    valid = np.zeros((len(dates), n_assets), dtype=bool)
    for row, d in enumerate(dates):
        t = panel.date_index(d)
        if t == 0:
            continue
        info = t - 1
        ok = mom.valid[info] & vol_ok[info]
        if not ok.any():
            continue
        sign = np.where(mom.returns[info] >= 0.0, 1.0, -1.0)
        sigma = np.maximum(vol[info], 1e-12)
        scale = np.minimum(sigma_target / sigma, 1.0)
        weights[row, ok] = (sign * scale)[ok]
        valid[row] = ok
    return WeightPanel(f"tsmom_{k}", list(dates), panel.asset_names, weights, valid)


def combo_tsmom(members, panel: PricePanel, cost_rate: float = 0.0,
                dates=None, rets: ReturnPanel | None = None,
                sigma_target: float = SIGMA_TARGET_DEFAULT,
                vol_window: int = TSMOM_VOL_WINDOW) -> StrategyReturns:
    """Equal-weight blend of single-lookback trend books, costed as one book."""
    members = list(members)
    if not members:
        raise ValueError("empty member list")
    if rets is None:
        rets = simple_returns(panel)
    books = []
    for k in members:
        wp = tsmom_weights(panel, k, sigma_target=sigma_target,
                           vol_window=vol_window, dates=dates)
        books.append(book_weights(wp))
        dates = wp.dates
    blended = np.mean(books, axis=0)
    gross = _gross_from_book(blended, dates, rets)
    label = f"tsmom_{members[0]}_{members[-1]}" if len(members) > 1 else f"tsmom_{members[0]}"
    return apply_costs(blended, dates, gross, cost_rate, label=label)


def max_sharpe_simplex(mu: np.ndarray, cov: np.ndarray, resolution: float = 0.01) -> np.ndarray:
    """Exhaustive Sharpe maximization over the 3-simplex grid.

    Grid points are enumerated in lexicographic order of (w1, w2, w3) integer
    steps; exact ties resolve to the first (lexicographically smallest)
    point.  A 1e-10 ridge is added to the diagonal when the covariance is
    singular or near-singular.
    """
    mu = np.asarray(mu, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    if np.linalg.eigvalsh(cov).min() < 1e-12:
        cov = cov + 1e-10 * np.eye(3)
    steps = int(round(1.0 / resolution))
    pts = []
    for i in range(steps + 1):
        for j in range(steps + 1 - i):
            pts.append((i, j, steps - i - j))
    grid = np.asarray(pts, dtype=np.float64) / steps
    variance = np.einsum("ij,jk,ik->i", grid, cov, grid)
    sharpe = (grid @ mu) / np.sqrt(np.maximum(variance, 1e-300))
    return grid[int(np.argmax(sharpe))]


def mvo_combine(task_returns, window=None, min_history: int = 252,
                rebalance_days: int = DAYS_PER_MONTH, resolution: float = 0.01):
    """Mean-variance allocation over the three sub-portfolios.

    Until ``min_history`` daily observations exist the allocation is the
    centroid.  From then on the simplex weights are re-estimated every
    ``rebalance_days`` from the trailing ``window`` days (expanding when
    window is None) of sub-portfolio returns known strictly before the
    rebalance date, and held in between.  Returns the allocation series and
    the gross combined returns.
    """
    fast, medium, slow = task_returns
    for other in (medium, slow):
        if other.dates != fast.dates:
            raise ValueError("task return calendars are misaligned")
    rets = np.column_stack([fast.gross, medium.gross, slow.gross])
    n = len(fast.dates)
    alloc = np.full((n, 3), 1.0 / 3.0)
    current = np.full(3, 1.0 / 3.0)
    for t in range(n):
        if t >= min_history and (t - min_history) % rebalance_days == 0:
            lo = 0 if window is None else max(0, t - int(window))
            hist = rets[lo:t]
            mu = hist.mean(axis=0)
            cov = np.cov(hist.T, ddof=0)
            current = max_sharpe_simplex(mu, cov, resolution)
        alloc[t] = current
    series = AllocationSeries(list(fast.dates), alloc)
    out = unified_return(series, task_returns)
    out.label = "mvo"
    return series, out


def apply_costs(book: np.ndarray, dates, gross: np.ndarray, cost_rate: float,
                label: str = "strategy") -> StrategyReturns:
    """Linear transaction costs on day-over-day book changes.

    Turnover on the first day is the full entry from cash, sum(|book|);
    afterwards it is sum(|book_t - book_{t-1}|).  Net = gross - rate * turnover.
    """
    if cost_rate < 0:
        raise ValueError(f"cost rate must be non-negative, got {cost_rate}")
    book = np.asarray(book, dtype=np.float64)
    turnover = np.empty(book.shape[0])
    if book.shape[0]:
        turnover[0] = np.abs(book[0]).sum()
        if book.shape[0] > 1:
            turnover[1:] = np.abs(np.diff(book, axis=0)).sum(axis=1)
    net = gross - cost_rate * turnover
    return StrategyReturns(label, list(dates), np.asarray(gross, dtype=np.float64),
                           net, turnover, cost_rate)
