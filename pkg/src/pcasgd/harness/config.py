"""Experiment configuration: TOML files with four fixed sections."""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from ..objective import ObjectiveSpec
from ..optimizer import AlgorithmConfig
from ..topology import Topology, TopologyError

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "apply_override", "PRESETS", "preset_path"]

PRESET_DIR = Path(__file__).with_name("presets")
PRESETS = tuple(sorted(p.stem for p in PRESET_DIR.glob("*.toml")))

_KEYS = {
    "topology": {"preset", "n_agents", "edges", "clusters", "delay", "weights"},
    "objective": {"kind", "dim", "noise_sigma", "lambda", "x0", "n_samples", "batch_size", "data_seed", "l2"},
    "algorithm": {"variant", "eta", "theta", "iterations", "criterion_sign"},
    "run": {"seeds", "out"},
    "bounds": {"r_formula"},
}
_REQUIRED = {
    "topology": {"n_agents"},
    "objective": {"kind", "dim"},
    "algorithm": {"variant", "eta"},
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: what to build, how to run it, where to write."""

    raw: dict[str, dict[str, Any]]
    topology: Topology
    objective: ObjectiveSpec
    algorithm: AlgorithmConfig
    weights: str
    x0: Any
    seeds: tuple[int, ...]
    out: Path
    r_formula: str

    def with_overrides(self, overrides: list[str]) -> ExperimentConfig:
        raw = copy.deepcopy(self.raw)
        for item in overrides:
            apply_override(raw, item)
        return parse_config(raw)


def preset_path(name: str) -> Path:
    return PRESET_DIR / f"{name}.toml"


def load_config(path: str | Path, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read a config file (or a bundled preset name) and validate it."""
    p = Path(path)
    if not p.exists() and str(path) in PRESETS:
        p = preset_path(str(path))
    try:
        raw = tomllib.loads(p.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    for item in overrides or ():
        apply_override(raw, item)
    return parse_config(raw)


def apply_override(raw: dict, item: str) -> None:
    """Apply ``section.key=value``; the value is read as a TOML literal, else as a string."""
    key, sep, value = item.partition("=")
    section, dot, name = key.strip().partition(".")
    if not sep or not dot or not name:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    try:
        parsed = tomllib.loads(f"v = {value.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        parsed = value.strip()
    raw.setdefault(section, {})[name] = parsed


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    unknown = sorted(set(sec) - _KEYS[name])
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    missing = sorted(_REQUIRED.get(name, set()) - set(sec))
    if missing:
        raise ConfigError(f"missing key(s) in [{name}]: {', '.join(missing)}")
    return sec


def parse_config(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - set(_KEYS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    top, obj, alg, run, bnd = (_section(raw, s) for s in ("topology", "objective", "algorithm", "run", "bounds"))

    try:
        n = int(top["n_agents"])
        preset = top.get("preset", "complete")
        clusters = top.get("clusters")
        delay = top.get("delay", 1)
        if preset == "edges":
            if "edges" not in top:
                raise ConfigError("[topology] preset = 'edges' needs an edges list")
            topology = Topology(n, [tuple(e) for e in top["edges"]], clusters or [list(range(n))], delay)
        elif preset in ("complete", "ring", "path"):
            if "edges" in top:
                raise ConfigError("[topology] edges are only read when preset = 'edges'")
            topology = getattr(Topology, preset)(n, clusters, delay)
        else:
            raise ConfigError(f"unknown topology preset {preset!r}; expected complete, ring, path or edges")
    except (TopologyError, TypeError) as exc:
        raise ConfigError(f"[topology] {exc}") from exc
    weights = top.get("weights", "metropolis")
    if weights not in ("metropolis", "uniform"):
        raise ConfigError(f"[topology] unknown weights {weights!r}")

    lam = obj.get("lambda", 1.0)
    if not (isinstance(lam, (int, float)) and 0.0 < lam <= 1.0):
        raise ConfigError(f"[objective] lambda must be in (0, 1], got {lam!r}")
    try:
        objective = ObjectiveSpec(
            kind=obj["kind"],
            dim=int(obj["dim"]),
            n_agents=n,
            noise_sigma=float(obj.get("noise_sigma", 0.0)),
            n_samples=int(obj.get("n_samples", 600)),
            batch_size=None if obj.get("batch_size", 16) == "full" else int(obj.get("batch_size", 16)),
            data_seed=int(obj.get("data_seed", 0)),
            l2=float(obj.get("l2", 1e-2)),
        )
        algorithm = AlgorithmConfig(
            variant=alg["variant"],
            eta=float(alg["eta"]),
            lam=float(lam),
            theta=float(alg.get("theta", 0.5)),
            iterations=int(alg.get("iterations", 500)),
            criterion_sign=alg.get("criterion_sign", "paper"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc

    x0 = obj.get("x0", 0.0)
    shape = np.shape(x0)
    if shape not in ((), (objective.dim,), (n, objective.dim)):
        raise ConfigError(f"[objective] x0 must be a scalar, a length-{objective.dim} list or {n} such lists")

    seeds = run.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    if not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("[run] seeds must be non-negative integers")
    r_formula = bnd.get("r_formula", "main")
    if r_formula not in ("main", "appendix"):
        raise ConfigError(f"[bounds] r_formula must be 'main' or 'appendix', got {r_formula!r}")

    return ExperimentConfig(
        raw=raw,
        topology=topology,
        objective=objective,
        algorithm=algorithm,
        weights=weights,
        x0=x0,
        seeds=tuple(seeds),
        out=Path(run.get("out", "runs")),
        r_formula=r_formula,
    )
