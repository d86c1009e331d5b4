"""Command line: solve, sweep, trace, validate."""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from .config import ConfigError, load_config
from .experiments import (
    AXES, REPORT_COLUMNS, SweepSpec, fmt, parse_axis_value, run_convergence_trace,
    run_sweep, run_validation_report,
)
from .optimizer import InfeasibleError
from .schemes import SchemeKind, solve_scheme

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value scenario file (defaults if omitted)")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rsma-urllc", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("solve", help="optimize one user drop")
    _common(p)
    p.add_argument("--scheme", default="rsma", choices=[k.value for k in SchemeKind])
    p.add_argument("--n-tx", type=int, help="fix the antenna count instead of searching")
    p.add_argument("--exact-etr", action="store_true",
                   help="score private streams with the common-failure fallback")

    p = sub.add_parser("sweep", help="sweep one scenario axis and write a CSV")
    _common(p)
    p.add_argument("--axis", required=True, choices=AXES)
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--scheme", default="rsma",
                   help="scheme or comma-separated list, e.g. rsma,noma,sdma")
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.add_argument("--exact-etr", action="store_true")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("trace", help="per-iteration objective of one run")
    _common(p)
    p.add_argument("--scheme", default="rsma", choices=[k.value for k in SchemeKind])
    p.add_argument("--out", help="CSV path (stdout if omitted)")

    p = sub.add_parser("validate", help="closed forms against numerical oracles")
    _common(p)
    p.add_argument("--n-tx", type=int, default=64)
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    return parser


def _config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _solve(args) -> int:
    cfg = _config(args)
    res = solve_scheme(cfg, args.scheme, exact=args.exact_etr, n_tx=args.n_tx)
    a, r = res.allocation, res.report
    print(f"scheme          {args.scheme}")
    print(f"n_tx            {a.n_tx}")
    print(f"n_pilot         {a.n_pilot}")
    print(f"n_data          {a.n_data}")
    print(f"total_etr       {fmt(r.total_etr)}")
    print(f"status          {res.trace.status}")
    print(f"alternations    {res.trace.alternations(res.n_tx)}")
    print(f"power_common    {fmt(a.power_common / cfg.total_power)}  (share of budget)")
    print("power_private   " + " ".join(fmt(x) for x in a.power_private / cfg.total_power))
    print(f"rate_common     {fmt(a.rate_common_total)}")
    print("rate_common_u   " + " ".join(fmt(x) for x in a.rate_common_user))
    print("rate_private    " + " ".join(fmt(x) for x in a.rate_private))
    print("dep_common      " + " ".join(fmt(x) for x in r.dep_common))
    print("dep_private     " + " ".join(fmt(x) for x in r.dep_private))
    return EXIT_OK


def _sweep(args) -> int:
    cfg = _config(args)
    values = tuple(parse_axis_value(args.axis, v) for v in args.values.split(",") if v.strip())
    schemes = tuple(s.strip() for s in args.scheme.split(",") if s.strip())
    spec = SweepSpec(args.axis, values, args.draws, schemes, args.out, args.seed, args.exact_etr)
    res = run_sweep(spec, cfg, workers=args.workers)
    if not args.out:
        sys.stdout.write(res.to_csv())
    for s in res.summary():
        print(f"{s['axis_value']:>12} {s['scheme']:>5} mean {s['mean']:.6g} "
              f"+- {s['ci95']:.3g} ({s['draws']} draws)", file=sys.stderr)
    return EXIT_OK


def _trace(args) -> int:
    cfg = _config(args)
    rows = run_convergence_trace(cfg, args.scheme, out=args.out)
    if not args.out:
        print("n_tx,iteration,stage,objective")
        for r in rows:
            print(",".join(fmt(x) for x in r))
    return EXIT_OK


def _validate(args) -> int:
    cfg = _config(args)
    rows = run_validation_report(cfg, n_tx=args.n_tx, trials=args.trials, out=args.out)
    if not args.out:
        print(",".join(REPORT_COLUMNS))
        for r in rows:
            print(",".join(fmt(x) for x in r.cells()))
    failed = sum(not r.passed for r in rows)
    print(f"{len(rows) - failed}/{len(rows)} checks within threshold", file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"solve": _solve, "sweep": _sweep, "trace": _trace, "validate": _validate}
    try:
        return handlers[args.verb](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
