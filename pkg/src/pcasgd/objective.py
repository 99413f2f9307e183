"""Local objectives f_i, their stochastic gradients and Hessian estimates.

Analytic kinds (rosenbrock, rastrigin, quadratic-pl) are split uniformly,
``f_i = F / N``, so every agent shares the stationary points of F.
``logistic-synthetic`` shards a fixed synthetic data set round-robin across
agents and samples minibatches from the local shard.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "KINDS",
    "ObjectiveSpec",
    "GradientSample",
    "local_loss",
    "local_gradient",
    "local_hessian",
    "stochastic_gradient",
    "hessian_diag_estimate",
    "global_loss",
    "true_global_gradient",
    "optimal_value",
]

KINDS = ("rosenbrock", "rastrigin", "quadratic-pl", "logistic-synthetic")


@dataclass(frozen=True)
class GradientSample:
    value: np.ndarray
    is_noisy: bool


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which F to minimize and how it is shared across ``n_agents``.

    Attributes:
        kind: One of :data:`KINDS`.
        dim: Parameter dimension d.
        n_agents: Number of agents sharing F.
        noise_sigma: Standard deviation budget of the additive gradient
            noise; each coordinate gets ``noise_sigma / sqrt(d)`` so the total
            variance per agent is ``noise_sigma**2``.
        n_samples, batch_size, data_seed, l2: logistic-synthetic only.
            ``batch_size=None`` means full local-shard gradients.
    """

    kind: str
    dim: int
    n_agents: int = 1
    noise_sigma: float = 0.0
    n_samples: int = 600
    batch_size: int | None = 16
    data_seed: int = 0
    l2: float = 1e-2

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.kind == "rosenbrock" and self.dim < 2:
            raise ValueError("rosenbrock needs dim >= 2")
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be positive, got {self.n_agents}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.kind == "logistic-synthetic":
            if self.n_samples < self.n_agents:
                raise ValueError("logistic-synthetic needs at least one sample per agent")
            if self.batch_size is not None and self.batch_size < 1:
                raise ValueError("batch_size must be positive")

    @property
    def is_analytic(self) -> bool:
        return self.kind != "logistic-synthetic"

    @cached_property
    def dataset(self) -> tuple[np.ndarray, np.ndarray]:
        """Features and 0/1 labels for logistic-synthetic (drawn once per data_seed)."""
        rng = np.random.default_rng(self.data_seed)
        X = rng.standard_normal((self.n_samples, self.dim))
        w_true = rng.standard_normal(self.dim)
        p = 1.0 / (1.0 + np.exp(-X @ w_true))
        y = (rng.random(self.n_samples) < p).astype(float)
        return X, y

    def shard(self, agent: int) -> np.ndarray:
        return np.arange(agent, self.n_samples, self.n_agents)

    def analytic_constants(self) -> dict[str, float]:
        """Known PL / smoothness constants of F (empty when not closed form)."""
        if self.kind == "quadratic-pl":
            return {"mu": 1.0, "gamma_m": 1.0, "xi_m": 0.0}
        return {}


def _check(spec: ObjectiveSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a vector of dimension {spec.dim}, got shape {x.shape}")
    return x


def _check_agent(spec: ObjectiveSpec, agent: int) -> None:
    if not 0 <= agent < spec.n_agents:
        raise ValueError(f"agent {agent} outside 0..{spec.n_agents - 1}")


# closed forms of the full objective F

def _rosenbrock(x):
    a, b = x[:-1], x[1:]
    return float(np.sum(100.0 * (b - a**2) ** 2 + (1.0 - a) ** 2))


def _rosenbrock_grad(x):
    a, b = x[:-1], x[1:]
    g = np.zeros_like(x)
    g[:-1] += -400.0 * a * (b - a**2) - 2.0 * (1.0 - a)
    g[1:] += 200.0 * (b - a**2)
    return g


def _rosenbrock_hess(x):
    d = x.size
    h = np.zeros((d, d))
    a, b = x[:-1], x[1:]
    idx = np.arange(d - 1)
    h[idx, idx] += 1200.0 * a**2 - 400.0 * b + 2.0
    h[idx + 1, idx + 1] += 200.0
    h[idx, idx + 1] = h[idx + 1, idx] = -400.0 * a
    return h


def _rastrigin(x):
    return float(10.0 * x.size + np.sum(x**2 - 10.0 * np.cos(2.0 * np.pi * x)))


def _rastrigin_grad(x):
    return 2.0 * x + 20.0 * np.pi * np.sin(2.0 * np.pi * x)


def _rastrigin_hess(x):
    return np.diag(2.0 + 40.0 * np.pi**2 * np.cos(2.0 * np.pi * x))


_ANALYTIC = {
    "rosenbrock": (_rosenbrock, _rosenbrock_grad, _rosenbrock_hess),
    "rastrigin": (_rastrigin, _rastrigin_grad, _rastrigin_hess),
    "quadratic-pl": (
        lambda x: 0.5 * float(x @ x),
        lambda x: x.copy(),
        lambda x: np.eye(x.size),
    ),
}


def _logistic_terms(spec: ObjectiveSpec, idx: np.ndarray, x: np.ndarray):
    X, y = spec.dataset
    z = X[idx] @ x
    return X[idx], y[idx], z


def _logistic_loss(spec, idx, x):
    _, y, z = _logistic_terms(spec, idx, x)
    return float(np.sum(np.logaddexp(0.0, z) - y * z)) / spec.n_samples


def _logistic_grad(spec, idx, x):
    Xs, y, z = _logistic_terms(spec, idx, x)
    return Xs.T @ (1.0 / (1.0 + np.exp(-z)) - y) / spec.n_samples


def _logistic_hess(spec, idx, x):
    Xs, _, z = _logistic_terms(spec, idx, x)
    p = 1.0 / (1.0 + np.exp(-z))
    return (Xs.T * (p * (1.0 - p))) @ Xs / spec.n_samples


def local_loss(spec: ObjectiveSpec, agent_id: int, x) -> float:
    """f_i(x) for agent ``agent_id``."""
    _check_agent(spec, agent_id)
    x = _check(spec, x)
    if spec.is_analytic:
        return _ANALYTIC[spec.kind][0](x) / spec.n_agents
    reg = 0.5 * spec.l2 * float(x @ x) / spec.n_agents
    return _logistic_loss(spec, spec.shard(agent_id), x) + reg


def local_gradient(spec: ObjectiveSpec, agent_id: int, x) -> np.ndarray:
    """Exact gradient of f_i (no noise, full shard)."""
    _check_agent(spec, agent_id)
    x = _check(spec, x)
    if spec.is_analytic:
        return _ANALYTIC[spec.kind][1](x) / spec.n_agents
    return _logistic_grad(spec, spec.shard(agent_id), x) + spec.l2 * x / spec.n_agents


def local_hessian(spec: ObjectiveSpec, agent_id: int, x) -> np.ndarray:
    _check_agent(spec, agent_id)
    x = _check(spec, x)
    if spec.is_analytic:
        return _ANALYTIC[spec.kind][2](x) / spec.n_agents
    return _logistic_hess(spec, spec.shard(agent_id), x) + spec.l2 * np.eye(spec.dim) / spec.n_agents


def stochastic_gradient(spec: ObjectiveSpec, agent_id: int, x, rng: np.random.Generator) -> GradientSample:
    """Unbiased gradient sample of f_i at ``x``.

    Analytic kinds add N(0, noise_sigma**2 / d) to every coordinate; no
    random numbers are drawn when ``noise_sigma == 0``. logistic-synthetic
    draws a minibatch (with replacement) from the agent's shard and
    rescales it to the shard's share of F.
    """
    _check_agent(spec, agent_id)
    x = _check(spec, x)
    if spec.is_analytic:
        g = _ANALYTIC[spec.kind][1](x) / spec.n_agents
        if spec.noise_sigma > 0:
            g = g + rng.normal(0.0, spec.noise_sigma / np.sqrt(spec.dim), size=spec.dim)
            return GradientSample(g, True)
        return GradientSample(g, False)

    shard = spec.shard(agent_id)
    reg = spec.l2 * x / spec.n_agents
    if spec.batch_size is None:
        return GradientSample(_logistic_grad(spec, shard, x) + reg, False)
    batch = shard[rng.integers(0, shard.size, size=spec.batch_size)]
    g = _logistic_grad(spec, batch, x) * (shard.size / spec.batch_size)
    return GradientSample(g + reg, True)


def hessian_diag_estimate(g, lam: float) -> np.ndarray:
    """Diagonal outer-product Hessian estimate ``lam * g * g``."""
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lambda must be in (0, 1], got {lam}")
    g = np.asarray(g, dtype=float)
    return lam * g * g


def global_loss(spec: ObjectiveSpec, x) -> float:
    """F(x) for a single parameter vector (sum of every agent's f_i)."""
    x = _check(spec, x)
    if spec.is_analytic:
        return _ANALYTIC[spec.kind][0](x)
    return _logistic_loss(spec, np.arange(spec.n_samples), x) + 0.5 * spec.l2 * float(x @ x)


def true_global_gradient(spec: ObjectiveSpec, x) -> np.ndarray:
    x = _check(spec, x)
    if spec.is_analytic:
        return _ANALYTIC[spec.kind][1](x)
    return _logistic_grad(spec, np.arange(spec.n_samples), x) + spec.l2 * x


def optimal_value(spec: ObjectiveSpec) -> float | None:
    """F* when known: 0 for the analytic kinds, Newton's method for logistic."""
    if spec.is_analytic:
        return 0.0
    x = np.zeros(spec.dim)
    idx = np.arange(spec.n_samples)
    for _ in range(100):
        g = _logistic_grad(spec, idx, x) + spec.l2 * x
        if np.linalg.norm(g) < 1e-14:
            break
        h = _logistic_hess(spec, idx, x) + spec.l2 * np.eye(spec.dim)
        x = x - np.linalg.solve(h, g)
    return global_loss(spec, x)
