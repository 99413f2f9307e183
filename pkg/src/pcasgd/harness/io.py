"""CSV and report serialization.

Floats are written with 17 significant digits so re-reading a file gives
back the exact doubles. Each run produces three files sharing a stem:
``<stem>.csv`` (per-iteration metrics), ``<stem>.steps.csv`` (per-agent
iterates for offline checks) and ``<stem>.bounds.txt``.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..optimizer import MetricsTrace, StepRecord, TraceRow

__all__ = [
    "TRACE_HEADER",
    "fmt",
    "write_trace",
    "read_trace_rows",
    "write_steps",
    "read_steps",
    "steps_path",
    "load_trace",
    "write_lines",
]

TRACE_HEADER = ("t", "loss", "grad_sq_norm", "consensus_dev", "theta", "pv_pred_count")
_VECTORS = ("x_t", "x_pre", "x_cli", "x_next", "g")


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def steps_path(trace_csv: str | Path) -> Path:
    p = Path(trace_csv)
    return p.with_name(p.name[: -len(".csv")] + ".steps.csv") if p.name.endswith(".csv") else p.with_suffix(".steps.csv")


def write_trace(path: str | Path, trace: MetricsTrace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for r in trace.rows:
            w.writerow([fmt(r.t), fmt(r.loss), fmt(r.grad_sq_norm), fmt(r.consensus_dev), fmt(r.theta), fmt(r.pv_pred_count)])


def read_trace_rows(path: str | Path) -> list[TraceRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader, ()))
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: unexpected trace header {header}")
        return [
            TraceRow(int(t), float(loss), float(g2), float(cd), float(th), int(pv))
            for t, loss, g2, cd, th, pv in reader
        ]


def write_steps(path: str | Path, trace: MetricsTrace) -> None:
    """One line per (iteration, agent) with every vector the update used."""
    if trace.steps:
        d = trace.steps[0].x_t.shape[1]
    else:
        d = trace.x0.shape[1]
    header = ["t", "agent", "theta", "choice", "gdc_r_norm", "gdc_norm"]
    header += [f"{name}_{k}" for name in _VECTORS for k in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for s in trace.steps:
            for i in range(s.x_t.shape[0]):
                row = [fmt(s.t), fmt(i), fmt(s.theta[i]), s.choice[i], fmt(s.gdc_r_norm), fmt(s.gdc_norm)]
                for name in _VECTORS:
                    row += [fmt(v) for v in getattr(s, name)[i]]
                w.writerow(row)


def read_steps(path: str | Path) -> list[StepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = (len(header) - 6) // len(_VECTORS)
        grouped: dict[int, list[list[str]]] = {}
        for row in reader:
            grouped.setdefault(int(row[0]), []).append(row)
    steps = []
    for t in sorted(grouped):
        rows = sorted(grouped[t], key=lambda r: int(r[1]))
        vecs = {}
        for v, name in enumerate(_VECTORS):
            lo = 6 + v * d
            vecs[name] = np.array([[float(x) for x in r[lo : lo + d]] for r in rows])
        steps.append(
            StepRecord(
                t=t,
                theta=np.array([float(r[2]) for r in rows]),
                choice=tuple(r[3] for r in rows),
                gdc_r_norm=float(rows[0][4]),
                gdc_norm=float(rows[0][5]),
                **vecs,
            )
        )
    return steps


def load_trace(trace_csv: str | Path, variant: str = "", seed: int = 0) -> MetricsTrace:
    """Rebuild a :class:`MetricsTrace` from a trace CSV and its steps sibling."""
    rows = read_trace_rows(trace_csv)
    steps = read_steps(steps_path(trace_csv))
    if not steps:
        raise ValueError(f"{trace_csv}: steps file is empty")
    status = "ok" if len(rows) == len(steps) else "divergence"
    return MetricsTrace(variant=variant, seed=seed, x0=steps[0].x_t, rows=rows, steps=steps, status=status)


def write_lines(path: str | Path, lines: list[str]) -> None:
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
