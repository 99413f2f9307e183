"""Agent graphs, reliable-cluster partitions and the three mixing matrices.

Agents are indexed ``0 .. n_agents - 1``. Two agents are *reliable*
neighbors when they share a cluster and an edge; neighbors in different
clusters are *unreliable* and are only seen through a state that is
``delay`` iterations old.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Topology",
    "MixingMatrix",
    "SpectralInfo",
    "TopologyError",
    "build_predicting_matrix",
    "build_clipping_matrix",
    "build_mask_matrix",
    "second_eigenvalue",
    "effective_delta2",
    "spectral_info",
    "metropolis_weights",
]

ROLES = ("predicting", "clipping", "mask")
STOCHASTIC_ATOL = 1e-12


class TopologyError(ValueError):
    """Raised for invalid graphs, partitions or mixing matrices."""


def _normalize_edges(n_agents: int, edges: Iterable[Sequence[int]]) -> frozenset[tuple[int, int]]:
    out = set()
    for edge in edges:
        i, j = (int(v) for v in edge)
        if not (0 <= i < n_agents and 0 <= j < n_agents):
            raise TopologyError(f"edge ({i}, {j}) references an agent outside 0..{n_agents - 1}")
        if i == j:
            # self-loops are implied
            continue
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class Topology:
    """Undirected agent graph with a reliable-cluster partition and delay.

    Attributes:
        n_agents: Number of agents N.
        edges: Unordered agent pairs stored as ``(min, max)`` tuples.
        clusters: Partition of the agents into reliable clusters.
        delay: Inter-cluster staleness tau in iterations, at least 1.

    Connectivity is not enforced here so that a disconnected edge list can
    still be loaded and reported on; the matrix builders reject it.
    """

    n_agents: int
    edges: frozenset[tuple[int, int]]
    clusters: tuple[tuple[int, ...], ...]
    delay: int = 1
    _cluster_of: dict[int, int] = field(init=False, repr=False, compare=False)
    _adjacency: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise TopologyError(f"n_agents must be positive, got {self.n_agents}")
        if int(self.delay) != self.delay or self.delay < 1:
            raise TopologyError(f"delay must be an integer >= 1, got {self.delay}")
        object.__setattr__(self, "edges", _normalize_edges(self.n_agents, self.edges))
        clusters = tuple(tuple(sorted(int(a) for a in c)) for c in self.clusters)
        object.__setattr__(self, "clusters", clusters)

        cluster_of: dict[int, int] = {}
        for idx, members in enumerate(clusters):
            if not members:
                raise TopologyError("clusters must be non-empty")
            for agent in members:
                if not 0 <= agent < self.n_agents:
                    raise TopologyError(f"cluster member {agent} outside 0..{self.n_agents - 1}")
                if agent in cluster_of:
                    raise TopologyError(f"agent {agent} appears in more than one cluster")
                cluster_of[agent] = idx
        if len(cluster_of) != self.n_agents:
            missing = sorted(set(range(self.n_agents)) - set(cluster_of))
            raise TopologyError(f"clusters do not cover agents {missing}")
        object.__setattr__(self, "_cluster_of", cluster_of)

        adj: list[list[int]] = [[] for _ in range(self.n_agents)]
        for i, j in sorted(self.edges):
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "_adjacency", tuple(tuple(sorted(a)) for a in adj))

    # constructors

    @classmethod
    def complete(cls, n_agents: int, clusters: Sequence[Sequence[int]] | None = None, delay: int = 1) -> Topology:
        edges = [(i, j) for i in range(n_agents) for j in range(i + 1, n_agents)]
        return cls(n_agents, edges, _default_clusters(n_agents, clusters), delay)

    @classmethod
    def ring(cls, n_agents: int, clusters: Sequence[Sequence[int]] | None = None, delay: int = 1) -> Topology:
        edges = [(i, (i + 1) % n_agents) for i in range(n_agents)] if n_agents > 1 else []
        return cls(n_agents, edges, _default_clusters(n_agents, clusters), delay)

    @classmethod
    def path(cls, n_agents: int, clusters: Sequence[Sequence[int]] | None = None, delay: int = 1) -> Topology:
        edges = [(i, i + 1) for i in range(n_agents - 1)]
        return cls(n_agents, edges, _default_clusters(n_agents, clusters), delay)

    # queries

    def neighbors(self, agent: int) -> tuple[int, ...]:
        """Graph neighbors of ``agent``, excluding itself."""
        return self._adjacency[agent]

    def degree(self, agent: int) -> int:
        return len(self._adjacency[agent])

    def cluster_of(self, agent: int) -> int:
        return self._cluster_of[agent]

    def reliable_neighbors(self, agent: int) -> tuple[int, ...]:
        c = self._cluster_of[agent]
        return tuple(j for j in self._adjacency[agent] if self._cluster_of[j] == c)

    def unreliable_neighbors(self, agent: int) -> tuple[int, ...]:
        c = self._cluster_of[agent]
        return tuple(k for k in self._adjacency[agent] if self._cluster_of[k] != c)

    def clipped_edges(self) -> frozenset[tuple[int, int]]:
        """Edges whose endpoints share a cluster."""
        return frozenset(e for e in self.edges if self._cluster_of[e[0]] == self._cluster_of[e[1]])

    def is_connected(self) -> bool:
        return _connected(self.n_agents, self._adjacency)


def _default_clusters(n_agents: int, clusters: Sequence[Sequence[int]] | None) -> tuple[tuple[int, ...], ...]:
    if clusters is None:
        return (tuple(range(n_agents)),)
    return tuple(tuple(c) for c in clusters)


def _connected(n: int, adjacency: Sequence[Sequence[int]]) -> bool:
    seen = {0}
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return len(seen) == n


@dataclass(frozen=True)
class MixingMatrix:
    """An N x N consensus weight matrix tagged with the step it serves."""

    entries: np.ndarray
    role: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise TopologyError(f"unknown mixing-matrix role {self.role!r}")
        a = np.array(self.entries, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.entries[i]

    def failed_checks(self, topology: Topology | None = None) -> list[str]:
        """Names of the invariants this matrix violates (empty when valid).

        W and W-tilde must be doubly stochastic, symmetric, nonnegative,
        supported on the graph and have spectrum in (0, 1]. The mask only
        needs nonnegativity and graph support.
        """
        a = self.entries
        failed = []
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            return ["square"]
        if np.any(a < 0):
            failed.append("nonnegative")
        if topology is not None:
            allowed = np.eye(topology.n_agents, dtype=bool)
            for i, j in topology.edges:
                allowed[i, j] = allowed[j, i] = True
            if np.any(a[~allowed] != 0):
                failed.append("graph support")
        if self.role == "mask":
            return failed
        if np.max(np.abs(a.sum(axis=1) - 1.0)) > STOCHASTIC_ATOL:
            failed.append("row sums")
        if np.max(np.abs(a.sum(axis=0) - 1.0)) > STOCHASTIC_ATOL:
            failed.append("column sums")
        if not np.allclose(a, a.T, rtol=0.0, atol=STOCHASTIC_ATOL):
            failed.append("symmetric")
            return failed
        eig = np.linalg.eigvalsh(a)
        if eig[0] <= 0.0 or eig[-1] > 1.0 + 1e-10:
            failed.append("spectrum in (0, 1]")
        return failed


@dataclass(frozen=True)
class SpectralInfo:
    e2: float
    e2_tilde: float
    delta2: float


def metropolis_weights(n: int, edges: Iterable[tuple[int, int]]) -> np.ndarray:
    """Metropolis-Hastings weights ``1 / (1 + max(deg_i, deg_j))`` on ``edges``.

    The diagonal absorbs the remainder so every row sums to one. Isolated
    agents get an identity row.
    """
    edges = list(edges)
    deg = np.zeros(n, dtype=int)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    w = np.zeros((n, n))
    for i, j in edges:
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    np.fill_diagonal(w, 0.0)
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def _lazy(w: np.ndarray, lazy: bool | str) -> np.ndarray:
    if lazy == "auto":
        lazy = bool(np.linalg.eigvalsh(w)[0] <= STOCHASTIC_ATOL)
    elif not isinstance(lazy, bool):
        raise TopologyError(f"lazy must be 'auto', True or False, got {lazy!r}")
    if lazy:
        return (w + np.eye(w.shape[0])) / 2.0
    return w


def build_predicting_matrix(topology: Topology, weights: str = "metropolis", lazy: bool | str = "auto") -> MixingMatrix:
    """Mixing matrix W over the full graph.

    Args:
        topology: A connected topology.
        weights: ``"metropolis"`` or ``"uniform"``. Uniform averaging
            (every entry 1/N) is only defined on complete graphs.
        lazy: ``"auto"`` applies ``(W + I) / 2`` when the smallest
            eigenvalue is not strictly positive; ``True``/``False`` force it.
    """
    if not topology.is_connected():
        raise TopologyError("graph not connected")
    n = topology.n_agents
    if weights == "metropolis":
        w = metropolis_weights(n, sorted(topology.edges))
    elif weights == "uniform":
        if len(topology.edges) != n * (n - 1) // 2:
            raise TopologyError("uniform averaging requires a complete graph")
        w = np.full((n, n), 1.0 / n)
    else:
        raise TopologyError(f"unknown weight rule {weights!r}")
    return MixingMatrix(_lazy(w, lazy), "predicting")


def build_clipping_matrix(topology: Topology, lazy: bool | str = "auto") -> MixingMatrix:
    """Mixing matrix W-tilde: Metropolis weights recomputed on intra-cluster edges only."""
    w = metropolis_weights(topology.n_agents, sorted(topology.clipped_edges()))
    return MixingMatrix(_lazy(w, lazy), "clipping")


def build_mask_matrix(topology: Topology, w: MixingMatrix | np.ndarray) -> MixingMatrix:
    """Copy of W restricted to (agent, unreliable neighbor) pairs, zero elsewhere.

    Rows are not renormalized, so a row sums to the total weight the agent
    gives its unreliable neighbors.
    """
    a = w.entries if isinstance(w, MixingMatrix) else np.asarray(w, dtype=float)
    if a.shape != (topology.n_agents, topology.n_agents):
        raise TopologyError(f"W has shape {a.shape}, expected {(topology.n_agents,) * 2}")
    mask = np.zeros_like(a)
    for i in range(topology.n_agents):
        for k in topology.unreliable_neighbors(i):
            mask[i, k] = a[i, k]
    return MixingMatrix(mask, "mask")


def second_eigenvalue(m: MixingMatrix | np.ndarray) -> float:
    """Second-largest eigenvalue of a symmetric matrix (0.0 for a 1 x 1 matrix)."""
    a = m.entries if isinstance(m, MixingMatrix) else np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise TopologyError(f"expected a square matrix, got shape {a.shape}")
    if not np.allclose(a, a.T, rtol=0.0, atol=STOCHASTIC_ATOL):
        raise TopologyError("matrix is not symmetric")
    if a.shape[0] == 1:
        return 0.0
    eig = np.linalg.eigvalsh(a)
    return float(eig[-2])


def effective_delta2(theta_schedule: Iterable[float], e2: float, e2_tilde: float) -> float:
    """``max_s theta_s * e2 + (1 - theta_s) * e2_tilde`` over the schedule.

    ``e2_tilde`` may equal 1: the clipped graph is disconnected whenever
    there is more than one cluster, and the result is then 1 unless every
    theta is positive.
    """
    thetas = np.asarray(list(theta_schedule), dtype=float)
    if thetas.size == 0:
        raise ValueError("theta schedule is empty")
    if np.any((thetas < 0.0) | (thetas > 1.0)):
        raise ValueError("every theta must lie in [0, 1]")
    for name, v in (("e2", e2), ("e2_tilde", e2_tilde)):
        if not 0.0 <= v <= 1.0 + 1e-10:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    return float(np.max(thetas * e2 + (1.0 - thetas) * e2_tilde))


def spectral_info(topology: Topology, theta_schedule: Iterable[float], weights: str = "metropolis") -> SpectralInfo:
    e2 = second_eigenvalue(build_predicting_matrix(topology, weights))
    e2t = second_eigenvalue(build_clipping_matrix(topology))
    e2t = min(e2t, 1.0)
    return SpectralInfo(e2, e2t, effective_delta2(theta_schedule, e2, e2t))
