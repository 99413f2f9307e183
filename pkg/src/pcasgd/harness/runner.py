"""Run cells (one config, one seed) and sweeps over a single axis."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..analysis import BoundError, bound_report, estimate_constants, format_report
from ..objective import optimal_value
from ..optimizer import MetricsTrace, run_experiment
from .config import ConfigError, ExperimentConfig, apply_override, parse_config
from .io import fmt, steps_path, write_lines, write_steps, write_trace

__all__ = ["CellResult", "report_lines", "run_cell", "sweep", "SWEEP_AXES", "SUMMARY_HEADER", "thread_count"]

SWEEP_AXES = {"tau": "topology.delay", "theta": "algorithm.theta", "variant": "algorithm.variant"}
SUMMARY_HEADER = ("axis", "value", "seed", "status", "final_loss", "avg_grad_sq", "max_consensus_dev", "pv_pred_freq")


@dataclass(frozen=True)
class CellResult:
    seed: int
    status: str
    trace_path: Path
    final_loss: float
    avg_grad_sq: float
    max_consensus_dev: float
    pv_pred_freq: float
    wall_clock: float


def thread_count() -> int:
    raw = os.environ.get("PCASGD_THREADS", "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"PCASGD_THREADS must be an integer, got {raw!r}") from None


def report_lines(trace: MetricsTrace, cfg: ExperimentConfig) -> list[str]:
    """Run footer plus the bound report, as key=value lines."""
    lines = [f"status={trace.status}", f"rows={len(trace.rows)}"]
    for i, x in enumerate(trace.final_state):
        lines.append(f"final_state.{i}=" + " ".join(fmt(v) for v in x))
    if trace.diverged or not trace.rows:
        lines.append("note=no bounds for a divergent run")
        return lines
    try:
        inputs = estimate_constants(trace, cfg.objective, cfg.topology, cfg.algorithm, cfg.weights)
    except BoundError as exc:
        lines.append(f"note=estimate_constants: {exc}")
        return lines
    f1 = trace.rows[0].loss - optimal_value(cfg.objective)
    report = bound_report(inputs, f1, len(trace.rows), cfg.r_formula)
    return lines + format_report(report, inputs).splitlines()


def _summarize(trace: MetricsTrace, n_agents: int) -> tuple[float, float, float, float]:
    if not trace.rows:
        nan = float("nan")
        return nan, nan, nan, nan
    pv = float("nan")
    if trace.variant == "pc-pv":
        pv = sum(r.pv_pred_count for r in trace.rows) / (len(trace.rows) * n_agents)
    return (
        trace.rows[-1].loss,
        float(np.mean(trace.column("grad_sq_norm"))),
        float(np.max(trace.column("consensus_dev"))),
        pv,
    )


def run_cell(cfg: ExperimentConfig, seed: int, out_dir: Path, stem: str) -> CellResult:
    trace = run_experiment(cfg.topology, cfg.objective, cfg.algorithm, seed, x0=cfg.x0, weights=cfg.weights)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{stem}.csv"
    write_trace(path, trace)
    write_steps(steps_path(path), trace)
    write_lines(out_dir / f"{stem}.bounds.txt", report_lines(trace, cfg))
    return CellResult(seed, trace.status, path, *_summarize(trace, cfg.topology.n_agents), trace.wall_clock)


def _sweep_cell(raw: dict, override: str, seed: int, out_dir: str, stem: str) -> CellResult:
    # module-level so it pickles for worker processes
    import copy

    raw = copy.deepcopy(raw)
    apply_override(raw, override)
    return run_cell(parse_config(raw), seed, Path(out_dir), stem)


def _override(axis: str, value: str) -> str:
    key = SWEEP_AXES[axis]
    return f'{key}="{value}"' if axis == "variant" else f"{key}={value}"


def sweep(cfg: ExperimentConfig, axis: str, values: list[str], out_dir: Path, threads: int = 1) -> list[tuple[str, CellResult]]:
    """Run values x seeds and write ``summary.csv``; rows keep (value, seed) order."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {sorted(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    cells = []
    for v in values:
        override = _override(axis, v)
        # validate every cell up front so a bad value fails before any run
        apply_override(probe := {k: dict(s) for k, s in cfg.raw.items()}, override)
        parse_config(probe)
        for seed in cfg.seeds:
            cells.append((v, (cfg.raw, override, seed, str(out_dir), f"{axis}={v}_seed{seed}")))

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_sweep_cell, *args) for _, args in cells]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_cell(*args) for _, args in cells]

    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(SUMMARY_HEADER)]
    for (v, _), r in zip(cells, results):
        lines.append(
            ",".join([axis, v, str(r.seed), r.status, fmt(r.final_loss), fmt(r.avg_grad_sq), fmt(r.max_consensus_dev), fmt(r.pv_pred_freq)])
        )
    write_lines(out_dir / "summary.csv", lines)
    return [(v, r) for (v, _), r in zip(cells, results)]
