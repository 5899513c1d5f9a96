"""Per-node ratio consensus state machine.

Two variants are provided. The ideal iteration assumes every link delivers
every round and simply sums the shares ``y/D`` of the in-neighbors. The
robust variant broadcasts running totals ``sigma`` and lets each receiver
keep the last total seen from every in-neighbor (``rho``); the difference
of consecutive ``rho`` values is the mass actually absorbed, so a dropped
message is made up for by the next delivery on the same link.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .graph import GraphSpec


class ProtocolError(RuntimeError):
    """A node received something the protocol forbids."""


@dataclass
class NodeState:
    node: int
    y: float
    z: float
    sigma_y: float = 0.0
    sigma_z: float = 0.0
    rho_y: dict[int, float] = field(default_factory=dict)
    rho_z: dict[int, float] = field(default_factory=dict)
    estimate: float | None = None
    update_times: list[int] = field(default_factory=list)

    def copy(self) -> NodeState:
        return replace(
            self,
            rho_y=dict(self.rho_y),
            rho_z=dict(self.rho_z),
            update_times=list(self.update_times),
        )


@dataclass(frozen=True)
class InitialConditions:
    """Initial masses. ``y0[i] = w_i * v_i`` and ``z0[i] = w_i`` give a weighted average."""

    y0: np.ndarray
    z0: np.ndarray

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=float).ravel()
        z0 = np.asarray(self.z0, dtype=float).ravel()
        if y0.shape != z0.shape:
            raise ValueError(f"y0 has {y0.size} entries but z0 has {z0.size}")
        if not (np.all(np.isfinite(y0)) and np.all(np.isfinite(z0))):
            raise ValueError("initial values must be finite")
        if np.any(z0 < 0):
            raise ValueError("z0 entries must be non-negative")
        if z0.sum() <= 0:
            raise ValueError("z0 must have a positive sum")
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "z0", z0)

    @classmethod
    def average(cls, values: Sequence[float]) -> InitialConditions:
        """Plain average consensus: ``z0`` is all ones."""
        values = np.asarray(values, dtype=float)
        return cls(values, np.ones_like(values))

    @property
    def target(self) -> float:
        return float(self.y0.sum() / self.z0.sum())

    def states(self, g: GraphSpec) -> list[NodeState]:
        if self.y0.size != g.m:
            raise ValueError(f"initial conditions have {self.y0.size} entries, graph has {g.m} nodes")
        return [
            NodeState(
                node=i,
                y=float(self.y0[i]),
                z=float(self.z0[i]),
                rho_y={j: 0.0 for j in g.in_neighbors[i]},
                rho_z={j: 0.0 for j in g.in_neighbors[i]},
            )
            for i in range(g.m)
        ]


class Gate(enum.Enum):
    THRESHOLD = "threshold"
    POSITIVE = "positive"


@dataclass(frozen=True)
class GatingPolicy:
    """When a node may refresh its ratio estimate.

    ``THRESHOLD`` opens the gate when ``z >= mu[i]``; ``POSITIVE`` when
    ``z > 0``. In threshold mode ``mu`` may be a scalar or one value per
    node; ``None`` asks the simulator to derive it from the graph.
    """

    mode: Gate = Gate.POSITIVE
    mu: float | tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Gate(self.mode))
        if self.mu is not None:
            mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
            if np.any(mu <= 0) or not np.all(np.isfinite(mu)):
                raise ValueError("mu must be positive and finite")
            object.__setattr__(self, "mu", tuple(float(v) for v in mu))

    @classmethod
    def positive(cls) -> GatingPolicy:
        return cls(Gate.POSITIVE)

    @classmethod
    def threshold(cls, mu=None) -> GatingPolicy:
        return cls(Gate.THRESHOLD, mu)

    def mu_for(self, i: int) -> float:
        if self.mu is None:
            raise ValueError("threshold gating needs mu; derive it with mu_for_node")
        return self.mu[0] if len(self.mu) == 1 else self.mu[i]


def ideal_step(states: Sequence[NodeState], g: GraphSpec) -> list[NodeState]:
    """One round over perfectly reliable links.

    Every node replaces its masses with the sum of ``y[j] / D_j`` over its
    in-neighbors ``j`` (self included).
    """
    deg = g.degrees
    out = []
    for i, s in enumerate(states):
        new = s.copy()
        new.y = sum(states[j].y / deg[j] for j in g.in_neighbors[i])
        new.z = sum(states[j].z / deg[j] for j in g.in_neighbors[i])
        out.append(new)
    return out


def robust_broadcast_phase(state: NodeState, g: GraphSpec, i: int) -> tuple[float, float]:
    """Add this round's share to the running totals and return the message.

    The same ``(sigma_y, sigma_z)`` pair goes to every out-neighbor.
    Mutates ``state``.
    """
    d = g.degrees[i]
    state.sigma_y += state.y / d
    state.sigma_z += state.z / d
    return state.sigma_y, state.sigma_z


def robust_receive_phase(
    state: NodeState,
    deliveries: Mapping[int, tuple[float, float] | None],
) -> NodeState:
    """Absorb delivered totals and recompute the node's masses.

    ``deliveries`` maps in-neighbor ids to the ``(sigma_y, sigma_z)`` they
    broadcast this round; missing or ``None`` entries are dropped messages.
    The self-delivery must be present. Mutates and returns ``state``.
    """
    unknown = set(deliveries) - set(state.rho_y)
    if unknown:
        raise ProtocolError(f"node {state.node} got messages from non-in-neighbors {sorted(unknown)}")
    if deliveries.get(state.node) is None:
        raise ProtocolError(f"node {state.node} is missing its self-delivery")

    y = z = 0.0
    for j in state.rho_y:
        msg = deliveries.get(j)
        if msg is None:
            continue
        sy, sz = msg
        y += sy - state.rho_y[j]
        z += sz - state.rho_z[j]
        state.rho_y[j] = sy
        state.rho_z[j] = sz
    state.y = y
    state.z = z
    return state


def compute_estimate(state: NodeState, policy: GatingPolicy, k: int) -> float | None:
    """Refresh the ratio estimate ``y / z`` if the gate is open at round ``k``.

    Returns the new estimate, or ``None`` when the gate is closed (the
    previous estimate stays on ``state``).
    """
    if policy.mode is Gate.THRESHOLD:
        is_open = state.z >= policy.mu_for(state.node)
    else:
        is_open = state.z > 0
    if not is_open:
        return None
    state.estimate = state.y / state.z
    state.update_times.append(k)
    return state.estimate


def mu_for_node(g: GraphSpec, z0: Sequence[float], i: int, c: float, l: int) -> float:
    """Gate threshold ``z0[i] * c**l / n`` a node can compute from local data.

    ``z0[i]`` serves as the node's lower bound on the total ``z`` mass.
    """
    if not 0 < c <= 1:
        raise ValueError(f"c must lie in (0, 1], got {c}")
    if l < 1:
        raise ValueError(f"l must be >= 1, got {l}")
    if z0[i] <= 0:
        raise ValueError(f"node {i + 1} has z0 = {z0[i]}; it cannot derive a positive mu itself")
    return float(z0[i]) * c**l / g.n
