"""PC-ASGD update laws and the synchronous-snapshot simulation loop.

Every iteration reads the iteration-t snapshot of all agents, computes each
agent's predicting and clipping candidates, combines them according to the
variant, and only then writes iteration t+1. Each agent draws gradient
samples from its own random stream, and the shared theta draws come from a
separate stream, so results do not depend on the order agents are visited.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .analysis import consensus_deviation
from .objective import (
    ObjectiveSpec,
    hessian_diag_estimate,
    local_gradient,
    local_loss,
    stochastic_gradient,
)
from .staleness import NeighborView, StateHistory, view
from .topology import MixingMatrix, Topology, build_clipping_matrix, build_predicting_matrix

__all__ = [
    "VARIANTS",
    "AlgorithmConfig",
    "StepRecord",
    "TraceRow",
    "MetricsTrace",
    "delay_compensated_terms",
    "delay_compensated_gradient",
    "predicting_step",
    "clipping_step",
    "combine",
    "pv_select",
    "baseline_dasgd_step",
    "rng_streams",
    "run_experiment",
]

VARIANTS = ("d-asgd", "p-asgd", "c-asgd", "pc-fixed", "pc-bernoulli", "pc-uniform", "pc-pv")

PREDICTING, CLIPPING, NOT_APPLICABLE = "predicting", "clipping", "n/a"

# SeedSequence spawn-key purposes
_GRADIENT_STREAM = 0
_THETA_STREAM = 1


@dataclass(frozen=True)
class AlgorithmConfig:
    """Update rule and its hyper-parameters.

    ``theta`` is the fixed weight for ``pc-fixed`` and the probability of a
    predicting round for ``pc-bernoulli``; other variants ignore it.
    ``criterion_sign`` selects how pc-pv scores a branch: ``"paper"``
    prefers the displacement most aligned with +g, ``"descent"`` the one
    most aligned with -g.
    """

    variant: str
    eta: float
    lam: float = 1.0
    theta: float = 0.5
    iterations: int = 500
    criterion_sign: str = "paper"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must be in (0, 1], got {self.lam}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must be in [0, 1], got {self.theta}")
        if int(self.iterations) != self.iterations or self.iterations < 1:
            raise ValueError(f"iterations must be a positive integer, got {self.iterations}")
        if self.criterion_sign not in ("paper", "descent"):
            raise ValueError(f"criterion_sign must be 'paper' or 'descent', got {self.criterion_sign!r}")


@dataclass(frozen=True)
class StepRecord:
    """Everything computed while moving from x_t to x_{t+1}.

    Arrays are indexed by agent along their first axis.
    """

    t: int
    theta: np.ndarray
    choice: tuple[str, ...]
    x_t: np.ndarray
    x_pre: np.ndarray
    x_cli: np.ndarray
    x_next: np.ndarray
    g: np.ndarray
    gdc_r_norm: float
    gdc_norm: float


@dataclass(frozen=True)
class TraceRow:
    t: int
    loss: float
    grad_sq_norm: float
    consensus_dev: float
    theta: float
    pv_pred_count: int


@dataclass
class MetricsTrace:
    """Per-iteration metrics of one run plus its step records.

    ``rows[k]`` describes x_{k+1}; ``steps[k]`` is the transition from
    x_k to x_{k+1}. ``x0`` holds the initial states.
    """

    variant: str
    seed: int
    x0: np.ndarray
    rows: list[TraceRow] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)
    status: str = "ok"
    wall_clock: float = 0.0

    @property
    def diverged(self) -> bool:
        return self.status == "divergence"

    @property
    def final_state(self) -> np.ndarray:
        return self.steps[-1].x_next if self.steps else self.x0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def theta_schedule(self) -> np.ndarray:
        """Every theta value applied during the run (per agent for pc-pv)."""
        if not self.steps:
            return np.zeros(0)
        return np.concatenate([s.theta for s in self.steps])


def delay_compensated_terms(g_stale, lam: float, self_trajectory) -> np.ndarray:
    """The tau Taylor terms ``g + lam * g*g * (x_{t-tau+r} - x_{t-tau})``, stacked by r."""
    g = np.asarray(g_stale, dtype=float)
    traj = np.asarray(self_trajectory, dtype=float)
    if traj.ndim != 2 or traj.shape[1:] != g.shape:
        raise ValueError(f"trajectory must hold vectors of shape {g.shape}, got {traj.shape}")
    h = hessian_diag_estimate(g, lam)
    return g + h * (traj - traj[0])


def delay_compensated_gradient(g_stale, lam: float, tau: int, self_trajectory) -> np.ndarray:
    """Sum of the tau delay-compensation terms for one unreliable neighbor.

    ``self_trajectory`` is the receiver's own ``x_{t-tau}, ..., x_{t-1}``.
    """
    if len(self_trajectory) != tau:
        raise ValueError(f"trajectory has {len(self_trajectory)} entries, expected tau={tau}")
    return delay_compensated_terms(g_stale, lam, self_trajectory).sum(axis=0)


def _reliable_mix(agent: int, nv: NeighborView, w_row: np.ndarray) -> np.ndarray:
    # ascending agent order so W and W-tilde sums match bitwise when they coincide
    states = {agent: nv.self_state, **nv.reliable_states}
    acc = None
    for j in sorted(states):
        term = w_row[j] * states[j]
        acc = term if acc is None else acc + term
    return acc


def predicting_step(agent: int, nv: NeighborView, w_row, g_i, stale_gradients: dict, lam: float, eta: float) -> np.ndarray:
    """Consensus over all neighbors with delay-compensated stale contributions.

    ``stale_gradients[k]`` is a fresh gradient sample of f_k at neighbor k's
    stale state, one entry per unreliable neighbor.
    """
    w_row = np.asarray(w_row, dtype=float)
    tau = len(nv.self_trajectory)
    x = _reliable_mix(agent, nv, w_row) - eta * np.asarray(g_i, dtype=float)
    for k in sorted(nv.unreliable_states):
        gdc = delay_compensated_gradient(stale_gradients[k], lam, tau, nv.self_trajectory)
        x = x + w_row[k] * (nv.unreliable_states[k] - eta * gdc)
    return x


def clipping_step(agent: int, nv: NeighborView, w_tilde_row, g_i, eta: float) -> np.ndarray:
    return _reliable_mix(agent, nv, np.asarray(w_tilde_row, dtype=float)) - eta * np.asarray(g_i, dtype=float)


def baseline_dasgd_step(agent: int, nv: NeighborView, w_row, g_i, eta: float) -> np.ndarray:
    """D-ASGD: stale neighbors are mixed in as received, without compensation."""
    w_row = np.asarray(w_row, dtype=float)
    x = _reliable_mix(agent, nv, w_row) - eta * np.asarray(g_i, dtype=float)
    for k in sorted(nv.unreliable_states):
        x = x + w_row[k] * nv.unreliable_states[k]
    return x


def combine(theta: float, x_pre, x_cli) -> np.ndarray:
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must be in [0, 1], got {theta}")
    x_pre = np.asarray(x_pre, dtype=float)
    x_cli = np.asarray(x_cli, dtype=float)
    if theta == 1.0:
        return x_pre.copy()
    if theta == 0.0:
        return x_cli.copy()
    # exact when x_pre == x_cli
    return x_cli + theta * (x_pre - x_cli)


def _cosine_score(delta: np.ndarray, g: np.ndarray) -> float:
    n = float(np.linalg.norm(delta))
    if n < 1e-15:
        return 0.0
    return float(delta @ g) / n


def pv_select(x_pre, x_cli, x_t, g_i, criterion_sign: str = "paper") -> tuple[str, np.ndarray]:
    """Pick the predicting or clipping candidate by the cosine criterion.

    The predicting branch wins ties. A branch whose displacement is shorter
    than 1e-15 scores 0.
    """
    x_pre = np.asarray(x_pre, dtype=float)
    x_cli = np.asarray(x_cli, dtype=float)
    x_t = np.asarray(x_t, dtype=float)
    g = np.asarray(g_i, dtype=float)
    if criterion_sign == "descent":
        g = -g
    elif criterion_sign != "paper":
        raise ValueError(f"criterion_sign must be 'paper' or 'descent', got {criterion_sign!r}")
    if _cosine_score(x_pre - x_t, g) >= _cosine_score(x_cli - x_t, g):
        return PREDICTING, x_pre
    return CLIPPING, x_cli


def rng_streams(seed: int, n_agents: int) -> tuple[list[np.random.Generator], np.random.Generator]:
    """Per-agent gradient streams and the shared theta stream for ``seed``.

    Each stream is keyed by (purpose, agent) so adding agents leaves the
    existing streams untouched.
    """
    agents = [
        np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_GRADIENT_STREAM, i))))
        for i in range(n_agents)
    ]
    theta = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(_THETA_STREAM,))))
    return agents, theta


def _round_theta(config: AlgorithmConfig, rng: np.random.Generator) -> float:
    v = config.variant
    if v == "p-asgd":
        return 1.0
    if v == "c-asgd":
        return 0.0
    if v == "pc-fixed":
        return float(config.theta)
    if v == "pc-bernoulli":
        return 1.0 if rng.random() < config.theta else 0.0
    if v == "pc-uniform":
        return float(rng.random())
    # d-asgd mixes with the full W; pc-pv decides per agent
    return 1.0


def _stacked_norm(vectors: list[np.ndarray]) -> float:
    if not vectors:
        return 0.0
    return float(np.sqrt(sum(float(v @ v) for v in vectors)))


def run_experiment(
    topology: Topology,
    objective: ObjectiveSpec,
    config: AlgorithmConfig,
    seed: int,
    x0=None,
    weights: str = "metropolis",
    matrices: tuple[MixingMatrix, MixingMatrix] | None = None,
) -> MetricsTrace:
    """Simulate ``config.iterations`` synchronous rounds and collect metrics.

    Args:
        topology: Agent graph, clusters and delay.
        objective: Local objectives; ``objective.n_agents`` must match.
        config: Variant and hyper-parameters.
        seed: Master seed for every random stream of the run.
        x0: Initial parameters: a scalar fill value, one vector shared by
            all agents, or an (N, d) array. Defaults to zeros.
        weights: Weight rule for W (see :func:`build_predicting_matrix`).
        matrices: Optional precomputed ``(W, W_tilde)``.

    A non-finite iterate stops the run with ``status == "divergence"``;
    the rows computed so far are kept.
    """
    n, d, tau = topology.n_agents, objective.dim, topology.delay
    if objective.n_agents != n:
        raise ValueError(f"objective is shared by {objective.n_agents} agents, topology has {n}")
    W, W_tilde = matrices if matrices is not None else (
        build_predicting_matrix(topology, weights),
        build_clipping_matrix(topology),
    )
    if x0 is None:
        x0 = np.zeros(d)
    x0 = np.asarray(x0, dtype=float)
    x0 = np.broadcast_to(x0, (n, d)).copy() if x0.shape in ((), (d,)) else x0.copy()
    if x0.shape != (n, d):
        raise ValueError(f"x0 must have shape ({d},) or ({n}, {d}), got {x0.shape}")

    agent_rngs, theta_rng = rng_streams(seed, n)
    history = StateHistory(n, tau)
    for i in range(n):
        history.record(i, 0, x0[i])
    trace = MetricsTrace(variant=config.variant, seed=seed, x0=x0)
    eta, lam = config.eta, config.lam
    started = time.perf_counter()

    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(config.iterations):
            round_theta = _round_theta(config, theta_rng)
            x_t = np.empty((n, d))
            x_pre = np.empty((n, d))
            x_cli = np.empty((n, d))
            x_next = np.empty((n, d))
            g = np.empty((n, d))
            thetas = np.empty(n)
            choices = []
            gdc_terms: list[np.ndarray] = []
            gdc_sums: list[np.ndarray] = []

            for i in range(n):
                nv = view(history, topology, i, t)
                x_t[i] = nv.self_state
                g[i] = stochastic_gradient(objective, i, nv.self_state, agent_rngs[i]).value
                stale = {}
                for k in sorted(nv.unreliable_states):
                    stale[k] = stochastic_gradient(objective, k, nv.unreliable_states[k], agent_rngs[i]).value
                    terms = delay_compensated_terms(stale[k], lam, nv.self_trajectory)
                    gdc_terms.append(terms)
                    gdc_sums.append(terms.sum(axis=0))

                x_pre[i] = predicting_step(i, nv, W.row(i), g[i], stale, lam, eta)
                x_cli[i] = clipping_step(i, nv, W_tilde.row(i), g[i], eta)

                if config.variant == "d-asgd":
                    thetas[i] = round_theta
                    choices.append(NOT_APPLICABLE)
                    x_next[i] = baseline_dasgd_step(i, nv, W.row(i), g[i], eta)
                elif config.variant == "pc-pv":
                    choice, x_next[i] = pv_select(x_pre[i], x_cli[i], x_t[i], g[i], config.criterion_sign)
                    thetas[i] = 1.0 if choice == PREDICTING else 0.0
                    choices.append(choice)
                else:
                    thetas[i] = round_theta
                    choices.append(NOT_APPLICABLE)
                    x_next[i] = combine(round_theta, x_pre[i], x_cli[i])

            gdc_r_norm = max((_stacked_norm([tm[r] for tm in gdc_terms]) for r in range(tau)), default=0.0) if gdc_terms else 0.0
            trace.steps.append(
                StepRecord(
                    t=t,
                    theta=thetas,
                    choice=tuple(choices),
                    x_t=x_t,
                    x_pre=x_pre,
                    x_cli=x_cli,
                    x_next=x_next,
                    g=g,
                    gdc_r_norm=gdc_r_norm,
                    gdc_norm=_stacked_norm(gdc_sums),
                )
            )
            if not np.all(np.isfinite(x_next)):
                trace.status = "divergence"
                break
            for i in range(n):
                history.record(i, t + 1, x_next[i])

            loss = sum(local_loss(objective, i, x_next[i]) for i in range(n))
            grad_sq = sum(float(np.sum(local_gradient(objective, i, x_next[i]) ** 2)) for i in range(n))
            if not (np.isfinite(loss) and np.isfinite(grad_sq)):
                trace.status = "divergence"
                break
            trace.rows.append(
                TraceRow(
                    t=t + 1,
                    loss=float(loss),
                    grad_sq_norm=grad_sq,
                    consensus_dev=consensus_deviation(x_next),
                    theta=float(np.mean(thetas)),
                    pv_pred_count=choices.count(PREDICTING),
                )
            )

    trace.wall_clock = time.perf_counter() - started
    return trace
