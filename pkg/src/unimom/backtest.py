"""Walk-forward protocol: expanding-window folds, grid search with early
stopping, and the end-to-end out-of-sample run.

Fold layout: the first fold trains on the first ``first_train_years``
calendar years and tests on the following year; each later fold extends the
training span by one year.  The validation set is the chronological tail
(20% by default) of the training span, so no validation day precedes a
training day.  Targets for a fold are computed on the panel truncated at the
fold's last training date, which masks the final ``horizon`` days of each
training span instead of letting labels peek into the test year.

Training batches are contiguous windows of eligible days, visited in a
shuffled order each epoch.  Within a test year the selected model is frozen.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape
from .config import RunConfig
from .data import PricePanel, simple_returns
from .features import FeaturePanel, momentum_features
from .losses import BatchWindow, DateGroup, SoftCapParams, total_loss
from .model import TASKS, MmoeConfig, MmoeModel, init_model, validate_grid_config
from .optim import Adam, clip_global_norm
from .portfolio import (AllocationSeries, StrategyReturns, apply_costs,
                        book_weights, mvo_combine, tsmom_weights, WeightPanel)
from .targets import build_targets

__all__ = ["Fold", "TrainSpec", "FoldData", "BacktestReport", "make_folds",
           "prepare_fold_data", "train_model", "grid_search", "run_backtest",
           "STRATEGY_ORDER"]

TSMOM_SINGLES = (1, 3, 6, 12)
TSMOM_COMBOS = ((1, 2, 3, 4), (5, 6, 7, 8), (9, 10, 11, 12),
                tuple(range(1, 13)))
MODEL_STRATEGIES = ("fast", "medium", "slow", "can", "eqwt", "mvo")
STRATEGY_ORDER = ("tsmom_1", "tsmom_3", "tsmom_6", "tsmom_12",
                  "tsmom_1_4", "tsmom_5_8", "tsmom_9_12", "tsmom_1_12",
                  "fast", "medium", "slow", "can", "eqwt", "mvo")


@dataclass
class Fold:
    index: int
    train_dates: list
    fit_dates: list
    val_dates: list
    test_dates: list
    test_year: int


@dataclass
class TrainSpec:
    max_epochs: int = 20
    patience: int = 5
    batch_days: int = 126
    seed: int = 0
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    cap: SoftCapParams = field(default_factory=SoftCapParams)
    loss_variant: str = "softcap"

    def __post_init__(self):
        if self.patience >= self.max_epochs:
            raise ValueError("patience must be smaller than max_epochs")


def make_folds(calendar, first_train_years: int = 10,
               val_fraction: float = 0.2) -> list[Fold]:
    """Expanding-window schedule with one test year per fold."""
    years = sorted({d.year for d in calendar})
    if len(years) < first_train_years + 1:
        raise ValueError(
            f"calendar spans {len(years)} years, need {first_train_years + 1}")
    if years != list(range(years[0], years[-1] + 1)):
        raise ValueError("calendar has a gap year; folds would not be consecutive")
    folds = []
    for j, test_year in enumerate(years[first_train_years:], start=1):
        train = [d for d in calendar if d.year < test_year]
        test = [d for d in calendar if d.year == test_year]
        n_val = math.ceil(val_fraction * len(train))
        folds.append(Fold(j, train, train[:-n_val], train[-n_val:], test, test_year))
    return folds


@dataclass
class FoldData:
    """Everything a training run needs, with lazy batch materialization."""

    fold: Fold
    panel: PricePanel
    feats: FeaturePanel
    targets_arr: np.ndarray       # train-truncated target values
    targets_valid: np.ndarray
    srets_arr: np.ndarray         # simple returns, invalid cells zeroed
    srets_valid: np.ndarray
    seq_len: int
    fit_anchors: np.ndarray       # panel indices of eligible fit days
    fit_masks: np.ndarray
    val_anchors: np.ndarray
    val_masks: np.ndarray


def _span_anchors(span_dates, panel, feats, srets_valid, targets_valid, seq_len):
    anchors, masks = [], []
    for a, b in zip(span_dates[:-1], span_dates[1:]):
        it = panel.date_index(a)
        if panel.date_index(b) != it + 1:
            continue
        start = it - seq_len + 1
        if start < 0:
            continue
        active = feats.valid[it] & feats.valid[start] & srets_valid[it + 1]
        if targets_valid is not None:
            active = active & targets_valid[it].all(axis=-1)
        if active.any():
            anchors.append(it)
            masks.append(active)
    n_assets = panel.n_assets
    if not anchors:
        return np.empty(0, dtype=int), np.empty((0, n_assets), dtype=bool)
    return np.asarray(anchors, dtype=int), np.asarray(masks, dtype=bool)


def prepare_fold_data(panel: PricePanel, feats: FeaturePanel, fold: Fold,
                      seq_len: int) -> FoldData:
    trunc = panel.truncate_after(fold.train_dates[-1])
    tgts = build_targets(trunc)
    srets = simple_returns(panel)
    srets_arr = np.where(srets.valid, srets.returns, 0.0)
    fit_anchors, fit_masks = _span_anchors(
        fold.fit_dates, panel, feats, srets.valid, tgts.valid, seq_len)
    val_anchors, val_masks = _span_anchors(
        fold.val_dates, panel, feats, srets.valid, tgts.valid, seq_len)
    return FoldData(fold, panel, feats, tgts.targets, tgts.valid,
                    srets_arr, srets.valid, seq_len,
                    fit_anchors, fit_masks, val_anchors, val_masks)


def _group_runs(anchors: np.ndarray, masks: np.ndarray):
    """Split anchor positions into maximal runs with identical active sets."""
    runs = []
    start = 0
    for p in range(1, len(anchors) + 1):
        if p == len(anchors) or not np.array_equal(masks[p], masks[start]):
            runs.append((start, p))
            start = p
    return runs


def _build_sequences(feats: FeaturePanel, anchors, assets, seq_len: int) -> np.ndarray:
    n_assets = len(assets)
    out = np.empty((len(anchors) * n_assets, seq_len, feats.features.shape[2]))
    for q, it in enumerate(anchors):
        block = feats.features[it - seq_len + 1:it + 1][:, assets, :]
        out[q * n_assets:(q + 1) * n_assets] = block.transpose(1, 0, 2)
    return out


def materialize_batch(data: FoldData, anchors: np.ndarray,
                      masks: np.ndarray) -> BatchWindow:
    batch = BatchWindow(dates=[data.panel.calendar[i] for i in anchors])
    for start, stop in _group_runs(anchors, masks):
        idxs = anchors[start:stop]
        assets = np.flatnonzero(masks[start])
        seqs = _build_sequences(data.feats, idxs, assets, data.seq_len)
        targets = data.targets_arr[idxs][:, assets, :]
        next_returns = data.srets_arr[idxs + 1][:, assets]
        batch.groups.append(DateGroup([data.panel.calendar[i] for i in idxs],
                                      assets, seqs, targets, next_returns))
    return batch


def _chunks(n: int, size: int, allow_short: bool = False):
    full = [(i, i + size) for i in range(0, n - size + 1, size)]
    if not full and allow_short and n >= 2:
        return [(0, n)]
    return full


def _evaluate(model: MmoeModel, data: FoldData, chunks, spec: TrainSpec) -> float:
    losses = []
    for lo, hi in chunks:
        batch = materialize_batch(data, data.val_anchors[lo:hi],
                                  data.val_masks[lo:hi])
        _, parts = total_loss(model, batch, spec.cap, spec.loss_variant)
        losses.append(parts["total"])
    return float(np.mean(losses))


def train_model(config: MmoeConfig, data: FoldData, spec: TrainSpec):
    """Train with shuffled contiguous windows and validation early stopping.

    Keeps the parameter snapshot with the best validation loss seen after any
    epoch and returns it, together with the loss history.  Stops after
    ``patience`` consecutive epochs without improvement.
    """
    fit_chunks = _chunks(len(data.fit_anchors), spec.batch_days)
    if not fit_chunks:
        raise ValueError(
            f"fold {data.fold.index}: no full {spec.batch_days}-day batch window "
            f"in the training span ({len(data.fit_anchors)} eligible days)")
    val_chunks = _chunks(len(data.val_anchors), spec.batch_days, allow_short=True)
    if not val_chunks:
        raise ValueError(f"fold {data.fold.index}: no usable validation days")

    model = init_model(config, strict=False)
    adam = Adam(lr=spec.learning_rate)
    names = list(model.params.keys())
    tensors = list(model.params.values())
    rng = np.random.default_rng(spec.seed)

    history = {"train": [], "val": []}
    best_val, best_epoch, best_snap = None, -1, None
    stale = 0
    for epoch in range(spec.max_epochs):
        order = rng.permutation(len(fit_chunks))
        epoch_losses = []
        for ci in order:
            lo, hi = fit_chunks[ci]
            batch = materialize_batch(data, data.fit_anchors[lo:hi],
                                      data.fit_masks[lo:hi])
            with Tape() as tape:
                loss, parts = total_loss(model, batch, spec.cap, spec.loss_variant)
            grads = dict(zip(names, tape.backward(loss, wrt=tensors)))
            grads, _ = clip_global_norm(grads, spec.clip_norm)
            adam.step(model.params, grads)
            epoch_losses.append(parts["total"])
        val_loss = _evaluate(model, data, val_chunks, spec)
        history["train"].append(float(np.mean(epoch_losses)))
        history["val"].append(val_loss)
        if best_val is None or val_loss < best_val:
            best_val, best_epoch, best_snap = val_loss, epoch, model.snapshot()
            stale = 0
        else:
            stale += 1
            if stale >= spec.patience:
                break
    model.restore(best_snap)
    history["best_epoch"] = best_epoch
    history["best_val"] = best_val
    return model, history


def _candidate_seed(run_seed: int, fold_index: int, position: int) -> int:
    ss = np.random.SeedSequence([run_seed, fold_index, position])
    return int(ss.generate_state(1)[0] % (2 ** 31))


def grid_search(data: FoldData, domains: dict, budget: int, spec: TrainSpec,
                run_seed: int, sequence_length: int,
                enforce_domains: bool = True, full_grid: bool = False,
                trainer=train_model):
    """Train sampled configs and keep the best-validation one.

    The full grid is the cartesian product of the domain lists in a fixed
    key order; a deterministic seed picks ``budget`` of them without
    replacement (or all, with ``full_grid``).  Ties on validation loss break
    to the smaller parameter count, then to lexicographic config order.
    """
    keys = ("lstm_layers", "lstm_hidden", "n_experts", "task_layers", "task_hidden")
    grid = [(a, b, c, d, e)
            for a in domains["lstm_layers"]
            for b in domains["lstm_hidden"]
            for c in domains["n_experts"]
            for d in domains["task_layers"]
            for e in domains["task_hidden"]]
    if not grid:
        raise ValueError("empty hyperparameter grid")
    if full_grid:
        chosen = list(range(len(grid)))
    else:
        if budget > len(grid):
            raise ValueError(f"budget {budget} exceeds grid size {len(grid)}")
        rng = np.random.default_rng(
            np.random.SeedSequence([run_seed, data.fold.index]))
        chosen = [int(i) for i in rng.choice(len(grid), size=budget, replace=False)]

    results = []
    for pos, gi in enumerate(chosen):
        values = dict(zip(keys, grid[gi]))
        config = MmoeConfig(sequence_length=sequence_length,
                            seed=_candidate_seed(run_seed, data.fold.index, pos),
                            **values)
        if enforce_domains:
            validate_grid_config(config)
        cand_spec = TrainSpec(max_epochs=spec.max_epochs, patience=spec.patience,
                              batch_days=spec.batch_days, seed=config.seed,
                              learning_rate=spec.learning_rate,
                              clip_norm=spec.clip_norm, cap=spec.cap,
                              loss_variant=spec.loss_variant)
        model, history = trainer(config, data, cand_spec)
        results.append({
            "config": config,
            "model": model,
            "history": history,
            "val_loss": history["best_val"],
            "param_count": model.param_count(),
        })
    best = min(results, key=lambda r: (r["val_loss"], r["param_count"],
                                       tuple(getattr(r["config"], k) for k in keys)))
    return best["config"], best["model"], results


@dataclass
class FoldResult:
    fold_index: int
    test_dates: list
    scores: dict            # task -> (len(test_dates), n_assets)
    active: np.ndarray      # (len(test_dates), n_assets) bool
    alloc: np.ndarray       # (len(test_dates), 3)
    summary: dict


def _spec_from_config(rc: RunConfig, seed: int) -> TrainSpec:
    return TrainSpec(max_epochs=rc.max_epochs, patience=rc.patience,
                     batch_days=rc.batch_days, seed=seed,
                     learning_rate=rc.learning_rate, clip_norm=rc.clip_norm,
                     cap=SoftCapParams(rc.tau, rc.symmetric_soft_cap),
                     loss_variant=rc.loss_variant)


def _fold_artifacts(panel: PricePanel, rc: RunConfig, fold: Fold,
                    feats: FeaturePanel | None = None) -> FoldResult:
    if feats is None:
        feats = momentum_features(panel)
    data = prepare_fold_data(panel, feats, fold, rc.sequence_length)
    spec = _spec_from_config(rc, rc.seed)
    config, model, results = grid_search(
        data, rc.grid_domains, rc.grid_budget, spec, rc.seed,
        rc.sequence_length, enforce_domains=rc.enforce_grid_domains,
        full_grid=rc.full_grid)

    n_assets = panel.n_assets
    n_test = len(fold.test_dates)
    scores = {task: np.zeros((n_test, n_assets)) for task in TASKS}
    active = np.zeros((n_test, n_assets), dtype=bool)
    alloc = np.zeros((n_test, 3))

    anchors, masks = [], []
    for row, d in enumerate(fold.test_dates):
        it = panel.date_index(d) - 1
        start = it - rc.sequence_length + 1
        if start < 0:
            raise ValueError(f"fold {fold.index}: no history before {d}")
        mask = feats.valid[it] & feats.valid[start]
        if not mask.any():
            raise ValueError(f"fold {fold.index}: no active assets for test date {d}")
        anchors.append(it)
        masks.append(mask)
    anchors = np.asarray(anchors, dtype=int)
    masks = np.asarray(masks, dtype=bool)
    for start, stop in _group_runs(anchors, masks):
        assets = np.flatnonzero(masks[start])
        seqs = _build_sequences(feats, anchors[start:stop], assets, rc.sequence_length)
        y, w = model.predict(seqs, stop - start, len(assets))
        for task in TASKS:
            scores[task][start:stop][:, assets] = y[task]
        active[start:stop][:, assets] = True
        alloc[start:stop] = w

    summary = {
        "fold": fold.index,
        "test_year": fold.test_year,
        "config": asdict(config),
        "best_val": results[[r["config"] for r in results].index(config)]["val_loss"],
        "candidates": [{"config": asdict(r["config"]),
                        "val_loss": r["val_loss"],
                        "epochs": len(r["history"]["val"])} for r in results],
    }
    return FoldResult(fold.index, list(fold.test_dates), scores, active, alloc, summary)


@dataclass
class BacktestReport:
    oos_dates: list
    assets: list
    strategies: dict            # label -> StrategyReturns, in STRATEGY_ORDER
    books: dict                 # label -> (dates x assets) capital fractions
    allocations: AllocationSeries
    mvo_allocations: AllocationSeries
    fold_summaries: list
    config: dict


def run_backtest(panel: PricePanel, schedule: list[Fold],
                 rc: RunConfig) -> BacktestReport:
    """Full out-of-sample run over every fold and every strategy."""
    if not schedule:
        raise ValueError("empty fold schedule")
    if rc.jobs > 1:
        with ProcessPoolExecutor(max_workers=rc.jobs) as pool:
            fold_results = list(pool.map(_fold_worker,
                                         [(panel, rc, fold) for fold in schedule]))
    else:
        feats = momentum_features(panel)
        fold_results = [_fold_artifacts(panel, rc, fold, feats) for fold in schedule]

    oos_dates = [d for fr in fold_results for d in fr.test_dates]
    n_oos, n_assets = len(oos_dates), panel.n_assets
    scores = {task: np.zeros((n_oos, n_assets)) for task in TASKS}
    active = np.zeros((n_oos, n_assets), dtype=bool)
    alloc = np.zeros((n_oos, 3))
    row = 0
    for fr in fold_results:
        n = len(fr.test_dates)
        for task in TASKS:
            scores[task][row:row + n] = fr.scores[task]
        active[row:row + n] = fr.active
        alloc[row:row + n] = fr.alloc
        row += n

    srets = simple_returns(panel)
    oos_idx = [panel.date_index(d) for d in oos_dates]
    oos_rets = np.where(srets.valid, srets.returns, 0.0)[oos_idx]
    task_books = {}
    task_gross = {}
    strategies: dict[str, StrategyReturns] = {}
    books: dict[str, np.ndarray] = {}

    for task in TASKS:
        wp = WeightPanel(task, oos_dates, panel.asset_names, scores[task], active)
        book = book_weights(wp)
        gross = (book * oos_rets).sum(axis=1)
        task_books[task] = book
        task_gross[task] = gross
        strategies[task] = apply_costs(book, oos_dates, gross, rc.cost_rate, label=task)
        books[task] = book

    def fused(weight_rows: np.ndarray, label: str) -> StrategyReturns:
        book = sum(weight_rows[:, k:k + 1] * task_books[task]
                   for k, task in enumerate(TASKS))
        gross = sum(weight_rows[:, k] * task_gross[task]
                    for k, task in enumerate(TASKS))
        books[label] = book
        return apply_costs(book, oos_dates, gross, rc.cost_rate, label=label)

    strategies["can"] = fused(alloc, "can")
    strategies["eqwt"] = fused(np.full((n_oos, 3), 1.0 / 3.0), "eqwt")

    gross_task_series = [
        StrategyReturns(t, list(oos_dates), task_gross[t], task_gross[t].copy(),
                        np.zeros(n_oos), 0.0) for t in TASKS]
    mvo_alloc, _ = mvo_combine(
        gross_task_series, min_history=rc.mvo_min_history,
        rebalance_days=rc.mvo_rebalance_days, resolution=rc.mvo_resolution)
    strategies["mvo"] = fused(mvo_alloc.weights, "mvo")

    trend_books = {}
    for k in range(1, 13):
        wp = tsmom_weights(panel, k, sigma_target=rc.sigma_target,
                           vol_window=rc.tsmom_vol_window, dates=oos_dates)
        trend_books[k] = book_weights(wp)
    for k in TSMOM_SINGLES:
        label = f"tsmom_{k}"
        book = trend_books[k]
        books[label] = book
        strategies[label] = apply_costs(book, oos_dates, (book * oos_rets).sum(axis=1),
                                        rc.cost_rate, label=label)
    for members in TSMOM_COMBOS:
        label = f"tsmom_{members[0]}_{members[-1]}"
        book = np.mean([trend_books[k] for k in members], axis=0)
        books[label] = book
        strategies[label] = apply_costs(book, oos_dates, (book * oos_rets).sum(axis=1),
                                        rc.cost_rate, label=label)

    ordered = {label: strategies[label] for label in STRATEGY_ORDER}
    return BacktestReport(
        oos_dates=oos_dates,
        assets=panel.asset_names,
        strategies=ordered,
        books=books,
        allocations=AllocationSeries(list(oos_dates), alloc),
        mvo_allocations=mvo_alloc,
        fold_summaries=[fr.summary for fr in fold_results],
        config=rc.to_dict(),
    )


def _fold_worker(args):
    panel, rc, fold = args
    return _fold_artifacts(panel, rc, fold)
