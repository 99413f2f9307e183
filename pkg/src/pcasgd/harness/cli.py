"""Command-line entry point: run, sweep, validate, bounds."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..analysis import BoundError
from ..topology import (
    TopologyError,
    build_clipping_matrix,
    build_mask_matrix,
    build_predicting_matrix,
    effective_delta2,
    second_eigenvalue,
)
from .config import ConfigError, load_config
from .io import load_trace, steps_path
from .runner import SWEEP_AXES, report_lines, run_cell, sweep, thread_count

EXIT_OK, EXIT_INVALID, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pcasgd", description="Delay-tolerant decentralized SGD simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one config for each seed")
    run.add_argument("config", help="config file or bundled preset name")
    run.add_argument("--seed", type=int, help="run only this seed")
    run.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    run.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")

    sw = sub.add_parser("sweep", help="sweep one axis over values x seeds")
    sw.add_argument("config")
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--out", type=Path)
    sw.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")

    va = sub.add_parser("validate", help="check the mixing matrices of a config")
    va.add_argument("config")

    bd = sub.add_parser("bounds", help="recompute the bound report of a saved trace")
    bd.add_argument("trace", type=Path)
    bd.add_argument("config")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config, args.override)
    out = args.out or cfg.out
    seeds = (args.seed,) if args.seed is not None else cfg.seeds
    code = EXIT_OK
    for seed in seeds:
        r = run_cell(cfg, seed, out, f"{cfg.algorithm.variant}_seed{seed}")
        print(f"{r.trace_path}: status={r.status} final_loss={r.final_loss:.6g} wall_clock={r.wall_clock:.3f}s")
        if r.status != "ok":
            code = EXIT_DIVERGED
    return code


def _cmd_sweep(args) -> int:
    cfg = load_config(args.config, args.override)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    out = args.out or cfg.out / f"sweep-{args.axis}"
    results = sweep(cfg, args.axis, values, out, thread_count())
    for v, r in results:
        print(f"{args.axis}={v} seed={r.seed}: status={r.status} avg_grad_sq={r.avg_grad_sq:.6g}")
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_DIVERGED if any(r.status != "ok" for _, r in results) else EXIT_OK


def _cmd_validate(args) -> int:
    cfg = load_config(args.config)
    topo = cfg.topology
    try:
        W = build_predicting_matrix(topo, cfg.weights)
    except TopologyError as exc:
        print(f"FAIL: {exc}")
        return EXIT_INVALID
    Wt = build_clipping_matrix(topo)
    Wm = build_mask_matrix(topo, W)
    failed = []
    with np.printoptions(precision=6, suppress=True):
        for name, m in (("W", W), ("W_tilde", Wt), ("W_prime", Wm)):
            print(f"{name} row sums: {m.entries.sum(axis=1)}")
            print(f"{name} column sums: {m.entries.sum(axis=0)}")
            failed += [f"{name}: {c}" for c in m.failed_checks(topo)]
    e2 = second_eigenvalue(W)
    e2t = min(second_eigenvalue(Wt), 1.0)
    print(f"e2={e2:.17g}")
    print(f"e2_tilde={e2t:.17g}")
    for theta in (0.0, 1.0):
        print(f"delta2(theta={theta:g})={effective_delta2([theta], e2, e2t):.17g}")
    if failed:
        for f in failed:
            print(f"FAIL: {f}")
        return EXIT_INVALID
    print("all matrix checks passed")
    return EXIT_OK


def _cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    if not steps_path(args.trace).exists():
        raise ConfigError(f"missing steps file {steps_path(args.trace)}")
    trace = load_trace(args.trace, cfg.algorithm.variant)
    print("\n".join(report_lines(trace, cfg)))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "validate": _cmd_validate, "bounds": _cmd_bounds}[args.command]
    try:
        return handler(args)
    except (ConfigError, BoundError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
