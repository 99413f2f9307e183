"""Per-agent state history and delayed neighbor views."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .topology import Topology

__all__ = ["StateHistory", "NeighborView", "StalenessError", "view"]


class StalenessError(LookupError):
    pass


class StateHistory:
    """Ring buffer of each agent's recent iterates.

    Keeps at least ``delay + 1`` states per agent so the stale view
    ``x_{t - delay}`` is available after iteration ``t``. Iteration 0 is
    retained for the whole run; it stands in for stale states during
    warm-up.
    """

    def __init__(self, n_agents: int, delay: int):
        if delay < 1:
            raise ValueError(f"delay must be >= 1, got {delay}")
        self.n_agents = n_agents
        self.delay = delay
        self._states: list[deque[tuple[int, np.ndarray]]] = [deque(maxlen=delay + 1) for _ in range(n_agents)]
        self._initial: list[np.ndarray | None] = [None] * n_agents

    def _agent(self, agent_id: int) -> deque:
        if not 0 <= agent_id < self.n_agents:
            raise StalenessError(f"unknown agent {agent_id}")
        return self._states[agent_id]

    def last_iteration(self, agent_id: int) -> int | None:
        buf = self._agent(agent_id)
        return buf[-1][0] if buf else None

    def record(self, agent_id: int, t: int, x) -> None:
        buf = self._agent(agent_id)
        expected = 0 if not buf else buf[-1][0] + 1
        if t != expected:
            raise StalenessError(f"out-of-order insert for agent {agent_id}: got t={t}, expected t={expected}")
        x = np.array(x, dtype=float)
        x.setflags(write=False)
        if t == 0:
            self._initial[agent_id] = x
        buf.append((t, x))

    def get(self, agent_id: int, t: int) -> np.ndarray:
        """The state agent ``agent_id`` recorded at iteration ``t``."""
        buf = self._agent(agent_id)
        if not buf or t > buf[-1][0]:
            raise StalenessError(f"future state: agent {agent_id} has no record for t={t}")
        if t == 0 and self._initial[agent_id] is not None:
            return self._initial[agent_id]
        first = buf[0][0]
        if t < first:
            raise StalenessError(f"state for agent {agent_id} at t={t} was evicted (oldest kept: {first})")
        return buf[t - first][1]


@dataclass(frozen=True)
class NeighborView:
    """What agent ``agent_id`` can see when updating at iteration ``t``.

    ``self_trajectory`` lists the receiver's own states at
    ``t - delay, ..., t - 1`` with indices below 0 clamped to the initial
    state, so warm-up displacements are zero.
    """

    agent_id: int
    t: int
    self_state: np.ndarray
    reliable_states: dict[int, np.ndarray]
    unreliable_states: dict[int, np.ndarray]
    self_trajectory: tuple[np.ndarray, ...]


def view(history: StateHistory, topology: Topology, agent_id: int, t: int) -> NeighborView:
    if t < 0:
        raise StalenessError(f"t must be >= 0, got {t}")
    if not 0 <= agent_id < topology.n_agents:
        raise StalenessError(f"unknown agent {agent_id}")
    tau = topology.delay
    stale_t = max(t - tau, 0)
    return NeighborView(
        agent_id=agent_id,
        t=t,
        self_state=history.get(agent_id, t),
        reliable_states={j: history.get(j, t) for j in topology.reliable_neighbors(agent_id)},
        unreliable_states={k: history.get(k, stale_t) for k in topology.unreliable_neighbors(agent_id)},
        self_trajectory=tuple(history.get(agent_id, max(t - tau + r, 0)) for r in range(tau)),
    )
