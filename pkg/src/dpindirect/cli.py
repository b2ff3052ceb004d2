"""Command line entry point: ``dpindirect run|sweep|selftest|bench``."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

from . import config as cfgmod
from .experiments import SWEEP_AXES, run_study, run_sweep
from .selftest import run_bench, run_selftest


def _add_study_args(p):
    p.add_argument("--config", help="key = value study file")
    p.add_argument("--study", choices=cfgmod.STUDIES, help="study name (overrides the file)")
    p.add_argument("--override", "-o", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key; may be repeated")
    p.add_argument("--workers", type=int, help="worker processes (wins over $DPINDIRECT_WORKERS)")
    p.add_argument("--output", help="output path")


def _load(args):
    values = cfgmod.parse_text(Path(args.config).read_text()) if args.config else {}
    values.update(cfgmod.parse_overrides(args.override))
    # flags win over both the file and the overrides
    if args.study:
        values["study"] = args.study
    if args.workers is not None:
        values["workers"] = args.workers
    if args.output:
        values["output"] = args.output
    return cfgmod.build_config(values)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.4f}"
    return str(v)


def print_summary(rows, write=print):
    if not rows:
        return
    cols = [c for c in rows[0] if c not in ("kind",)]
    table = [[_fmt(r.get(c, "")) for c in cols] for r in rows]
    widths = [max(len(c), *(len(t[i]) for t in table)) for i, c in enumerate(cols)]
    write("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
    for t in table:
        write("  ".join(x.ljust(w) for x, w in zip(t, widths)))


def cmd_run(args) -> int:
    cfg = _load(args)
    _, summary = run_study(cfg)
    print_summary(summary["summary"])
    failures = sum(r["failures"] for r in summary["summary"])
    if failures:
        print(f"{failures} replicate rows failed", file=sys.stderr)
    return 1 if failures else 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise SystemExit("--values must list at least one value")
    rows = run_sweep(cfg, args.axis, [float(v) if args.axis not in ("R", "n") else int(v) for v in values])
    print_summary(rows)
    return 1 if sum(r["failures"] for r in rows) else 0


def cmd_selftest(args) -> int:
    return 0 if run_selftest() else 1


def cmd_bench(args) -> int:
    models = ("locscale", "linreg", "logistic") if args.model == "all" else (args.model,)
    run_bench(models, repeat=args.repeat)
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="dpindirect", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run one simulation study")
    _add_study_args(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("sweep", help="run a study over a grid of one setting")
    _add_study_args(p)
    p.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma separated values")
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("selftest", help="quick mechanism, estimator and plumbing checks")
    p.set_defaults(func=cmd_selftest)
    p = sub.add_parser("bench", help="time synthetic evaluations and fits")
    p.add_argument("--model", default="all", choices=("all", "locscale", "linreg", "logistic"))
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
