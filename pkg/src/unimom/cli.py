"""Command-line entry point.

Subcommands cover the whole pipeline: ``synth`` or ``ingest`` to produce a
price panel, ``features``/``targets`` for debug dumps, ``backtest`` to run
the walk-forward experiment, ``report`` to turn a run directory into summary
tables and figures, and ``gradcheck`` to validate gradients end to end.
Every subcommand is deterministic given its inputs and seeds.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .backtest import make_folds, run_backtest
from .config import RunConfig
from .data import load_panel, save_panel, synthesize_panel
from .features import LOOKBACKS, momentum_features
from .gradcheck import toy_gradient_check
from .report import emit_report, write_run_outputs
from .targets import HORIZONS, forward_tsmom

GRADCHECK_TOLERANCE = 1e-4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unimom",
        description="Multi-horizon momentum portfolios: data, training, backtests, reports.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic price panel")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--assets", type=int, required=True)
    p.add_argument("--years", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--start-year", type=int, default=1990)
    p.add_argument("--regimes", help="JSON file: per-asset [drift, vol, days] segments")

    p = sub.add_parser("ingest", help="load delimited price files into a panel")
    p.add_argument("--input", required=True)
    p.add_argument("--layout", choices=["long", "per-asset"], default="long")
    p.add_argument("--out", required=True)

    p = sub.add_parser("features", help="dump the momentum feature panel")
    p.add_argument("--panel", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("targets", help="dump forward-looking targets for one horizon")
    p.add_argument("--panel", required=True)
    p.add_argument("--horizon", type=int, choices=list(HORIZONS), required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("backtest", help="run the walk-forward backtest")
    p.add_argument("--panel", required=True)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--full-grid", action="store_true")
    p.add_argument("--loss", choices=["softcap", "sharpe"])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)

    p = sub.add_parser("report", help="summarize a backtest run directory")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--seed", type=int, default=7)
    return parser


def _cmd_synth(args) -> int:
    regimes = None
    if args.regimes:
        with open(args.regimes, encoding="utf-8") as fh:
            raw = json.load(fh)
        regimes = [[tuple(seg) for seg in asset_segments] for asset_segments in raw]
    panel = synthesize_panel(args.seed, args.assets, args.years,
                             regimes=regimes, start_year=args.start_year)
    save_panel(panel, args.out)
    print(f"wrote {panel.n_dates} dates x {panel.n_assets} assets to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    panel = load_panel(args.input, layout=args.layout)
    save_panel(panel, args.out)
    print(f"wrote {panel.n_dates} dates x {panel.n_assets} assets to {args.out}")
    return 0


def _cmd_features(args) -> int:
    panel = load_panel(args.panel)
    feats = momentum_features(panel)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "asset"] + [f"f{d}" for d in LOOKBACKS])
        for i, d in enumerate(feats.calendar):
            for j, name in enumerate(panel.asset_names):
                if feats.valid[i, j]:
                    writer.writerow([d.isoformat(), name]
                                    + [repr(float(v)) for v in feats.features[i, j]])
    print(f"wrote features to {args.out}")
    return 0


def _cmd_targets(args) -> int:
    panel = load_panel(args.panel)
    sl = forward_tsmom(panel, args.horizon)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", "asset", "target"])
        for i, d in enumerate(sl.calendar):
            for j, name in enumerate(panel.asset_names):
                if sl.valid[i, j]:
                    writer.writerow([d.isoformat(), name, repr(float(sl.target[i, j]))])
    print(f"wrote {args.horizon}-day targets to {args.out}")
    return 0


def _cmd_backtest(args) -> int:
    rc = RunConfig.from_file(args.config) if args.config else RunConfig()
    jobs = args.jobs
    if jobs is None and os.environ.get("UNIMOM_JOBS"):
        jobs = int(os.environ["UNIMOM_JOBS"])
    rc = rc.override(loss_variant=args.loss, seed=args.seed, jobs=jobs,
                     full_grid=True if args.full_grid else None)
    panel = load_panel(args.panel)
    schedule = make_folds(panel.calendar, rc.first_train_years, rc.val_fraction)
    report = run_backtest(panel, schedule, rc)
    write_run_outputs(report, args.out)
    print(f"backtest complete: {len(schedule)} folds, "
          f"{len(report.oos_dates)} out-of-sample days -> {args.out}")
    return 0


def _cmd_report(args) -> int:
    written = emit_report(args.in_dir, args.out_dir)
    print(f"wrote {len(written)} files to {args.out_dir or args.in_dir}")
    return 0


def _cmd_gradcheck(args) -> int:
    err = toy_gradient_check(seed=args.seed)
    print(f"max relative gradient error: {err:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if err < GRADCHECK_TOLERANCE else 1


_HANDLERS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "features": _cmd_features,
    "targets": _cmd_targets,
    "backtest": _cmd_backtest,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, ZeroDivisionError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
