"""Consensus metrics, convergence-bound calculators and constant estimation.

Vectors stacked over agents follow the convention of the update analysis:
``g(x_t)`` is the concatenation of every agent's gradient sample and its
norm is the Euclidean norm of the concatenation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .objective import ObjectiveSpec
    from .optimizer import AlgorithmConfig, MetricsTrace
    from .topology import Topology

__all__ = [
    "BoundError",
    "BoundInputs",
    "BoundReport",
    "Theorem1Constants",
    "consensus_deviation",
    "lemma1_bound",
    "theorem1_constants",
    "theorem1_envelope",
    "theorem2_R",
    "theorem2_envelope",
    "estimate_constants",
    "bound_report",
    "format_report",
]


class BoundError(ValueError):
    """A bound was requested outside the hypotheses it is stated under."""


def consensus_deviation(states) -> float:
    """Largest distance from any agent's parameters to the agent average."""
    x = np.asarray(states, dtype=float)
    if x.size == 0 or x.shape[0] == 0:
        raise ValueError("consensus deviation needs at least one agent")
    if x.ndim == 1:
        x = x[:, None]
    return float(np.max(np.linalg.norm(x - x.mean(axis=0), axis=1)))


@dataclass(frozen=True)
class BoundInputs:
    """Constants entering the consensus and convergence bounds.

    ``delta2`` defaults to ``max(e2, e2_tilde)``, which dominates the
    effective second eigenvalue of any theta schedule in [0, 1].
    ``provenance`` maps field names to ``"analytic"``, ``"empirical"`` or
    ``"configured"``.
    """

    G: float
    B: float
    sigma: float
    M: float
    mu: float
    gamma_m: float
    xi_m: float
    eps: float
    eps_D: float
    lam: float
    eta: float
    tau: int
    theta_m: float
    e2: float
    e2_tilde: float
    delta2: float | None = None
    provenance: dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        for name in ("G", "B", "sigma", "M", "mu", "gamma_m", "xi_m", "eps", "eps_D", "eta"):
            v = getattr(self, name)
            if not v >= 0:
                raise BoundError(f"{name} must be nonnegative, got {v}")
        if not 0.0 < self.lam <= 1.0:
            raise BoundError(f"lambda must be in (0, 1], got {self.lam}")
        if not 0.0 <= self.theta_m <= 1.0:
            raise BoundError(f"theta_m must be in [0, 1], got {self.theta_m}")
        if int(self.tau) != self.tau or self.tau < 1:
            raise BoundError(f"tau must be a positive integer, got {self.tau}")
        if self.delta2 is None:
            object.__setattr__(self, "delta2", max(self.e2, self.e2_tilde))

    def replace(self, **changes) -> BoundInputs:
        return replace(self, **changes)


def _gap(inputs: BoundInputs) -> float:
    if not inputs.delta2 < 1.0:
        raise BoundError(f"no spectral gap: delta2 = {inputs.delta2}")
    return 1.0 - inputs.delta2


def lemma1_bound(inputs: BoundInputs) -> float:
    """Consensus bound ``eta (G + (tau - 1) B theta_m) / (1 - delta2)``."""
    gap = _gap(inputs)
    return inputs.eta * (inputs.G + (inputs.tau - 1) * inputs.B * inputs.theta_m) / gap


@dataclass(frozen=True)
class Theorem1Constants:
    C1: float
    C_r: np.ndarray
    C2: float
    Q: float


def theorem1_constants(inputs: BoundInputs) -> Theorem1Constants:
    """C1, C_r (r = 1..tau-1), C2 and the residual Q of the PL-rate bound."""
    G, B, th = inputs.G, inputs.B, inputs.theta_m
    eta, tau, mu, gm = inputs.eta, inputs.tau, inputs.mu, inputs.gamma_m
    if not mu > 0:
        raise BoundError("theorem1 bound needs a positive PL constant mu")
    if not 0.0 < eta <= (1.0 / (2.0 * mu * tau)) * (1.0 + 1e-12):
        raise BoundError(f"step size outside the theorem1 range: need 0 < eta <= 1/(2 mu tau) = {1.0 / (2.0 * mu * tau)}, got {eta}")
    gap = _gap(inputs)

    C1 = (G + (tau - 1) * B * th) / gap
    r = np.arange(1, tau)
    C_r = (2.0 * G + (r - 1) * B * th) / gap
    C2 = (2.0 * G + (tau - 1) * B * th) / gap
    sum_cr = float(np.sum(C_r))

    Q = (
        2.0 * (1.0 - 2.0 * mu * eta * tau) * G * eta * C1
        + eta**3 * inputs.xi_m * G / 2.0 * sum_cr
        + 2.0 * eta**2 * G * gm * C1
        + G * eta * tau * inputs.sigma
        + eta**2 * G * (gm + inputs.eps_D + inputs.eps + (1.0 - inputs.lam) * G**2) * sum_cr
        + eta * G**2
        + eta**2 * gm * G * tau * C2
    )
    return Theorem1Constants(C1=C1, C_r=C_r, C2=C2, Q=Q)


def theorem1_envelope(F1_minus_Fstar: float, Q: float, mu: float, eta: float, tau: int, t: int) -> float:
    """Upper bound on E[F(x_t) - F*] after t iterations (t >= 1)."""
    rate = 2.0 * mu * eta * tau
    contraction = 1.0 - rate
    if not (0.0 <= contraction < 1.0):
        raise BoundError(f"contraction factor 1 - 2 mu eta tau = {contraction} outside [0, 1)")
    if t < 1:
        raise BoundError(f"t must be >= 1, got {t}")
    floor = Q / rate
    return contraction ** (t - 1) * (F1_minus_Fstar - floor) + floor


def theorem2_R(inputs: BoundInputs, formula: str = "main") -> float:
    """Residual R of the nonconvex average-gradient bound.

    ``formula="appendix"`` evaluates the variant stated alongside the proof,
    which differs from the main statement in its eta and tau powers.
    """
    G, B, M, s = inputs.G, inputs.B, inputs.M, inputs.sigma
    eta, tau, gm = inputs.eta, inputs.tau, inputs.gamma_m
    if not (eta > 0 and eta * gm < 1.0):
        raise BoundError(f"step size outside the theorem2 range: need 0 < eta < 1/gamma_m, got eta={eta}, gamma_m={gm}")
    gap = _gap(inputs)
    C1 = (G + (tau - 1) * B * inputs.theta_m) / gap
    if formula == "main":
        return (
            2.0 * G * C1
            + tau**2 * eta**2 * gm * M / 2.0
            + eta * s**2 / 2.0
            + eta * s * tau * B
            + 2.0 * eta * gm * (tau * B + G) * C1
        )
    if formula == "appendix":
        return (
            2.0 * G * eta**2 * C1
            + tau * eta**2 * gm * M / 2.0
            + eta * s**2 / 2.0
            + eta * s * tau * B
            + 2.0 * eta**2 * gm * (tau * B + G) * C1
        )
    raise ValueError(f"unknown R formula {formula!r}; expected 'main' or 'appendix'")


def theorem2_envelope(F1_minus_Fstar: float, R: float, eta: float, T: int) -> float:
    """Bound on (1/T) sum_t E||grad F(x_t)||^2 over the first T iterations."""
    if T < 1:
        raise BoundError(f"T must be >= 1, got {T}")
    return 2.0 * F1_minus_Fstar / (T * eta) + R / eta


# estimation from a completed run


def _spectral_norm(h: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvalsh(h))))


def estimate_constants(
    trace: MetricsTrace,
    objective: ObjectiveSpec,
    topology: Topology,
    config: AlgorithmConfig,
    weights: str = "metropolis",
) -> BoundInputs:
    """Fill :class:`BoundInputs` from a finished run.

    G, B and M are suprema over the run of the stacked gradient norm, the
    stacked norm of each delay-compensation term and the squared stacked
    norm of the full compensated gradient. sigma is the configured noise
    scaled to the stacked vector. mu, gamma_m and xi_m are analytic for
    quadratic-pl and sampled at visited points otherwise; eps and eps_D
    compare the diagonal estimate with the exact Hessian at visited points.
    theta_m is the largest theta used anywhere in the run.
    """
    from .objective import global_loss, local_gradient, local_hessian, optimal_value, true_global_gradient
    from .topology import build_clipping_matrix, build_predicting_matrix, effective_delta2, second_eigenvalue

    if trace.diverged:
        raise BoundError("cannot estimate constants from a divergent trace")
    if not trace.steps:
        raise BoundError("trace has no steps")
    n = topology.n_agents
    prov: dict[str, str] = {}

    G = max(float(np.linalg.norm(s.g)) for s in trace.steps)
    B = max(s.gdc_r_norm for s in trace.steps)
    M = max(s.gdc_norm for s in trace.steps) ** 2
    prov.update(G="empirical", B="empirical", M="empirical")

    if objective.is_analytic:
        sigma = objective.noise_sigma * math.sqrt(n)
        prov["sigma"] = "configured"
    else:
        sigma = 0.0
        for s in trace.steps:
            exact = np.stack([local_gradient(objective, i, s.x_t[i]) for i in range(n)])
            sigma = max(sigma, float(np.linalg.norm(s.g - exact)))
        prov["sigma"] = "empirical"

    visited = [s.x_t for s in trace.steps] + [trace.final_state]
    eps = eps_D = 0.0
    gamma_m = xi_m = 0.0
    prev_h: list[np.ndarray | None] = [None] * n
    for k, states in enumerate(visited):
        for i in range(n):
            h = local_hessian(objective, i, states[i])
            if k < len(trace.steps):
                est = config.lam * trace.steps[k].g[i] ** 2
                eps = max(eps, float(np.linalg.norm(est - np.diag(h))))
            eps_D = max(eps_D, float(np.linalg.norm(h - np.diag(np.diag(h)))))
            gamma_m = max(gamma_m, _spectral_norm(h))
            if prev_h[i] is not None:
                dx = float(np.linalg.norm(states[i] - visited[k - 1][i]))
                if dx > 0:
                    xi_m = max(xi_m, _spectral_norm(h - prev_h[i]) / dx)
            prev_h[i] = h
    prov.update(eps="empirical", eps_D="empirical")

    analytic = objective.analytic_constants()
    if analytic:
        mu, gamma_m, xi_m = analytic["mu"], analytic["gamma_m"], analytic["xi_m"]
        prov.update(mu="analytic", gamma_m="analytic", xi_m="analytic")
    else:
        f_star = optimal_value(objective)
        mu = math.inf
        for states in visited:
            y = states.mean(axis=0)
            gap = global_loss(objective, y) - f_star
            if gap > 1e-15:
                gy = true_global_gradient(objective, y)
                mu = min(mu, 0.5 * float(gy @ gy) / gap)
        mu = 0.0 if math.isinf(mu) else mu
        prov.update(mu="empirical", gamma_m="empirical", xi_m="empirical")

    e2 = second_eigenvalue(build_predicting_matrix(topology, weights))
    e2_tilde = min(second_eigenvalue(build_clipping_matrix(topology)), 1.0)
    schedule = trace.theta_schedule()
    return BoundInputs(
        G=G,
        B=B,
        sigma=sigma,
        M=M,
        mu=mu,
        gamma_m=gamma_m,
        xi_m=xi_m,
        eps=eps,
        eps_D=eps_D,
        lam=config.lam,
        eta=config.eta,
        tau=topology.delay,
        theta_m=float(np.max(schedule)),
        e2=e2,
        e2_tilde=e2_tilde,
        delta2=effective_delta2(schedule, e2, e2_tilde),
        provenance=prov,
    )


@dataclass(frozen=True)
class BoundReport:
    """Every derived bound for one set of inputs.

    Entries whose hypotheses fail are ``nan`` and the reason is kept in
    ``notes``.
    """

    delta2: float
    C1: float
    C_r: np.ndarray
    C2: float
    Q: float
    R: float
    lemma1_bound: float
    envelope_t: tuple[int, ...]
    theorem1_envelope: tuple[float, ...]
    theorem2_envelope: tuple[float, ...]
    notes: tuple[str, ...] = ()


def bound_report(inputs: BoundInputs, F1_minus_Fstar: float, T: int, r_formula: str = "main") -> BoundReport:
    """Evaluate all bounds, with envelopes at t in {1, T/2, T}."""
    notes = []
    nan = float("nan")
    ts = tuple(sorted({1, max(T // 2, 1), T}))

    def attempt(fn, label):
        try:
            return fn()
        except BoundError as exc:
            notes.append(f"{label}: {exc}")
            return None

    lem = attempt(lambda: lemma1_bound(inputs), "lemma1")
    c = attempt(lambda: theorem1_constants(inputs), "theorem1")
    R = attempt(lambda: theorem2_R(inputs, r_formula), "theorem2")
    if c is not None:
        env1 = tuple(theorem1_envelope(F1_minus_Fstar, c.Q, inputs.mu, inputs.eta, inputs.tau, t) for t in ts)
    else:
        env1 = (nan,) * len(ts)
    env2 = tuple(theorem2_envelope(F1_minus_Fstar, R, inputs.eta, t) for t in ts) if R is not None else (nan,) * len(ts)
    return BoundReport(
        delta2=float(inputs.delta2),
        C1=c.C1 if c else nan,
        C_r=c.C_r if c else np.zeros(0),
        C2=c.C2 if c else nan,
        Q=c.Q if c else nan,
        R=R if R is not None else nan,
        lemma1_bound=lem if lem is not None else nan,
        envelope_t=ts,
        theorem1_envelope=env1,
        theorem2_envelope=env2,
        notes=tuple(notes),
    )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def format_report(report: BoundReport, inputs: BoundInputs | None = None) -> str:
    """Flat ``key=value`` rendering of a report (and optionally its inputs)."""
    lines = []
    if inputs is not None:
        for k, v in asdict(inputs).items():
            if k == "provenance":
                continue
            lines.append(f"input.{k}={_fmt(v)}")
        for k, v in sorted(inputs.provenance.items()):
            lines.append(f"provenance.{k}={v}")
    for k in ("delta2", "C1", "C2", "Q", "R", "lemma1_bound"):
        lines.append(f"{k}={_fmt(getattr(report, k))}")
    for r, v in enumerate(report.C_r, start=1):
        lines.append(f"C_r.{r}={_fmt(v)}")
    for t, e1, e2 in zip(report.envelope_t, report.theorem1_envelope, report.theorem2_envelope):
        lines.append(f"theorem1_envelope.t{t}={_fmt(e1)}")
        lines.append(f"theorem2_envelope.T{t}={_fmt(e2)}")
    for note in report.notes:
        lines.append(f"note={note}")
    return "\n".join(lines) + "\n"
