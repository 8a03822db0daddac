"""Backtest output files: raw return dumps, summary tables, and figures.

A run directory is written by ``write_run_outputs``:

    run.json                    configuration echo and strategy list
    returns/<strategy>.csv      date,gross,net,turnover (full precision)
    allocations.csv             date,w_fast,w_med,w_slow (full precision)

``emit_report`` consumes either a BacktestReport or a run directory and
writes, beside the inputs or into ``--out``:

    summary.csv                 one row per strategy, benchmark-table order
    cumret_<strategy>.csv       date,cumret_pct (full precision)
    allocations.csv             copied through
    ablation.csv                two-block table when a softcap and a sharpe
                                run are both found under the input directory
    cumret.png, allocations.png rendered figures of the same data

Summary/ablation percentages and ratios are formatted to 2 decimals; series
files keep full precision so compounding identities survive a round trip.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .backtest import BacktestReport, STRATEGY_ORDER
from .metrics import cumulative_returns, summarize

__all__ = ["RunData", "write_run_outputs", "load_run", "emit_report"]

ALLOC_HEADER = ["date", "w_fast", "w_med", "w_slow"]
SUMMARY_HEADER = ["portfolio", "ann_return_pct", "ann_vol_pct",
                  "sharpe", "sortino", "max_dd_pct"]


@dataclass
class RunData:
    """The slice of a backtest needed for reporting."""

    labels: list
    dates: dict        # label -> list of ISO date strings
    gross: dict
    net: dict
    turnover: dict
    allocations: list  # rows of (date, w1, w2, w3)
    loss_variant: str


def _fmt(x: float) -> str:
    return repr(float(x))


def _from_report(report: BacktestReport) -> RunData:
    labels = list(report.strategies.keys())
    dates, gross, net, turnover = {}, {}, {}, {}
    for label, sr in report.strategies.items():
        dates[label] = [d.isoformat() for d in sr.dates]
        gross[label] = np.asarray(sr.gross)
        net[label] = np.asarray(sr.net)
        turnover[label] = np.asarray(sr.turnover)
    alloc = [(d.isoformat(), *map(float, row))
             for d, row in zip(report.allocations.dates, report.allocations.weights)]
    return RunData(labels, dates, gross, net, turnover, alloc,
                   report.config.get("loss_variant", "softcap"))


def write_run_outputs(report: BacktestReport, out_dir):
    """Raw per-strategy dumps plus a config echo; deterministic bytes."""
    os.makedirs(out_dir, exist_ok=True)
    run = _from_report(report)
    ret_dir = os.path.join(out_dir, "returns")
    os.makedirs(ret_dir, exist_ok=True)
    for label in run.labels:
        with open(os.path.join(ret_dir, f"{label}.csv"), "w", newline="",
                  encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "gross", "net", "turnover"])
            for d, g, n, t in zip(run.dates[label], run.gross[label],
                                  run.net[label], run.turnover[label]):
                w.writerow([d, _fmt(g), _fmt(n), _fmt(t)])
    _write_allocations(run.allocations, os.path.join(out_dir, "allocations.csv"))
    meta = {"strategies": run.labels, "config": report.config,
            "fold_summaries": report.fold_summaries}
    with open(os.path.join(out_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_allocations(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ALLOC_HEADER)
        for d, a, b, c in rows:
            w.writerow([d, _fmt(a), _fmt(b), _fmt(c)])


def load_run(run_dir) -> RunData:
    """Rebuild RunData from a directory written by write_run_outputs."""
    with open(os.path.join(run_dir, "run.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    labels = meta["strategies"]
    dates, gross, net, turnover = {}, {}, {}, {}
    for label in labels:
        path = os.path.join(run_dir, "returns", f"{label}.csv")
        ds, gs, ns, ts = [], [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                ds.append(row[0])
                gs.append(float(row[1]))
                ns.append(float(row[2]))
                ts.append(float(row[3]))
        dates[label] = ds
        gross[label] = np.asarray(gs)
        net[label] = np.asarray(ns)
        turnover[label] = np.asarray(ts)
    alloc = []
    with open(os.path.join(run_dir, "allocations.csv"), newline="",
              encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            alloc.append((row[0], float(row[1]), float(row[2]), float(row[3])))
    return RunData(labels, dates, gross, net, turnover, alloc,
                   meta["config"].get("loss_variant", "softcap"))


def _is_run_dir(path) -> bool:
    return os.path.isfile(os.path.join(path, "run.json"))


def _discover(in_dir):
    """The primary run plus any sibling run with the other loss variant."""
    runs = []
    if _is_run_dir(in_dir):
        runs.append(load_run(in_dir))
    for name in sorted(os.listdir(in_dir)):
        sub = os.path.join(in_dir, name)
        if os.path.isdir(sub) and _is_run_dir(sub):
            runs.append(load_run(sub))
    if not runs:
        raise ValueError(f"{in_dir}: no run.json found")
    primary = next((r for r in runs if r.loss_variant == "softcap"), runs[0])
    other = next((r for r in runs if r.loss_variant != primary.loss_variant), None)
    return primary, other


def _summary_rows(run: RunData):
    rows = []
    for label in run.labels:
        m = summarize(label, run.net[label])
        rows.append([label, f"{m.ann_return_pct:.2f}", f"{m.ann_vol_pct:.2f}",
                     f"{m.sharpe:.2f}", f"{m.sortino:.2f}", f"{m.max_dd_pct:.2f}"])
    return rows


def _plot_cumret(run: RunData, path):
    fig, ax = plt.subplots(figsize=(10, 6))
    x = np.arange(len(next(iter(run.dates.values()))))
    for label in run.labels:
        ax.plot(x, 100.0 * cumulative_returns(run.net[label]), label=label,
                linewidth=1.0)
    dates = run.dates[run.labels[0]]
    ticks = np.linspace(0, len(dates) - 1, min(8, len(dates))).astype(int)
    ax.set_xticks(ticks)
    ax.set_xticklabels([dates[i] for i in ticks], rotation=30, ha="right")
    ax.set_ylabel("cumulative net return (%)")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_allocations(run: RunData, path):
    if not run.allocations:
        return
    rows = np.asarray([[a, b, c] for _, a, b, c in run.allocations])
    dates = [d for d, *_ in run.allocations]
    fig, ax = plt.subplots(figsize=(10, 4))
    x = np.arange(len(dates))
    ax.stackplot(x, rows.T, labels=["fast", "medium", "slow"], alpha=0.85)
    ticks = np.linspace(0, len(dates) - 1, min(8, len(dates))).astype(int)
    ax.set_xticks(ticks)
    ax.set_xticklabels([dates[i] for i in ticks], rotation=30, ha="right")
    ax.set_ylim(0, 1)
    ax.set_ylabel("allocation weight")
    ax.legend(fontsize=8, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_report(source, out_dir=None):
    """Write summary, per-strategy cumulative returns, allocations, figures.

    ``source`` is a BacktestReport or a directory; directories may contain a
    single run or one subdirectory per loss variant, in which case the
    softcap run is summarized and ablation.csv compares the two variants.
    Returns the list of files written.
    """
    if isinstance(source, BacktestReport):
        primary, other = _from_report(source), None
        out_dir = out_dir or "."
    else:
        primary, other = _discover(source)
        out_dir = out_dir or source
    os.makedirs(out_dir, exist_ok=True)
    written = []

    path = os.path.join(out_dir, "summary.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(_summary_rows(primary))
    written.append(path)

    for label in primary.labels:
        path = os.path.join(out_dir, f"cumret_{label}.csv")
        cum = 100.0 * cumulative_returns(primary.net[label])
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "cumret_pct"])
            for d, v in zip(primary.dates[label], cum):
                w.writerow([d, _fmt(v)])
        written.append(path)

    path = os.path.join(out_dir, "allocations.csv")
    _write_allocations(primary.allocations, path)
    written.append(path)

    if other is not None:
        path = os.path.join(out_dir, "ablation.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant"] + SUMMARY_HEADER)
            for run in (primary, other):
                model_rows = [r for r in _summary_rows(run)
                              if r[0] not in STRATEGY_ORDER[:8]]
                for row in model_rows:
                    w.writerow([run.loss_variant] + row)
        written.append(path)

    fig_path = os.path.join(out_dir, "cumret.png")
    _plot_cumret(primary, fig_path)
    written.append(fig_path)
    fig_path = os.path.join(out_dir, "allocations.png")
    _plot_allocations(primary, fig_path)
    written.append(fig_path)
    return written
