"""Synchronous-round simulation of ratio consensus over lossy links.

Randomness: numpy's PCG64 seeded through ``SeedSequence(seed,
spawn_key=(run_index,))``. Each round draws exactly one uniform per
non-self-loop link, in canonical edge order, so a seed fixes the entire
drop pattern regardless of what analysis is done with it.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np

from .graph import GraphSpec, augmented_space
from .protocol import (
    Gate,
    GatingPolicy,
    InitialConditions,
    NodeState,
    compute_estimate,
    ideal_step,
    mu_for_node,
    robust_broadcast_phase,
    robust_receive_phase,
)


class Mode(enum.Enum):
    IDEAL = "ideal"
    ROBUST = "robust"


@dataclass(frozen=True)
class DropMask:
    """Link outcomes of one round: ``reliable[b]`` for buffer edge ``b``."""

    round: int
    reliable: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "reliable", np.asarray(self.reliable, dtype=bool))

    def as_dict(self, g: GraphSpec) -> dict[tuple[int, int], bool]:
        return {(e.source, e.target): bool(x) for e, x in zip(g.buffer_edges, self.reliable)}

    def check(self, g: GraphSpec) -> None:
        if self.reliable.shape != (len(g.buffer_edges),):
            raise ValueError(
                f"mask for round {self.round} has {self.reliable.size} entries, "
                f"graph has {len(g.buffer_edges)} links"
            )


def make_rng(seed: int, run_index: int = 0) -> np.random.Generator:
    """Independent stream for Monte Carlo run ``run_index`` under ``seed``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(run_index,))))


def draw_mask(g: GraphSpec, rng: np.random.Generator, k: int) -> DropMask:
    """Each link ``(i, j)`` independently reliable with probability ``q_ij``."""
    u = rng.random(len(g.buffer_edges))
    return DropMask(k, u < g.q_buffers)


def all_reliable(g: GraphSpec, k: int) -> DropMask:
    return DropMask(k, np.ones(len(g.buffer_edges), dtype=bool))


@dataclass(frozen=True)
class RunConfig:
    graph: GraphSpec
    init: InitialConditions
    steps: int
    seed: int = 0
    gating: GatingPolicy = field(default_factory=GatingPolicy.positive)
    mode: Mode = Mode.ROBUST
    run_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if isinstance(self.steps, bool) or not isinstance(self.steps, (int, np.integer)) or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.init.y0.size != self.graph.m:
            raise ValueError(f"y0 has {self.init.y0.size} entries, graph has {self.graph.m} nodes")
        if self.gating.mode is Gate.THRESHOLD and np.any(self.init.y0 < 0):
            raise ValueError("negative y0 is only supported with positive gating")


@dataclass
class Trace:
    """Dense per-round record; row 0 is the initial state.

    ``estimate`` holds the last gated estimate (NaN before the first) and
    ``gated`` whether it was refreshed in that round.
    """

    graph: GraphSpec
    config: RunConfig
    masks: list[DropMask]
    y: np.ndarray        # (K+1, m)
    z: np.ndarray
    nu_y: np.ndarray     # (K+1, #buffers)
    nu_z: np.ndarray
    estimate: np.ndarray  # (K+1, m)
    gated: np.ndarray     # (K+1, m) bool
    update_times: list[list[int]]

    @property
    def steps(self) -> int:
        return len(self.masks)

    def augmented(self, which: str = "y") -> np.ndarray:
        """Node masses followed by buffer masses, shape ``(K+1, n)``."""
        if which == "y":
            return np.hstack([self.y, self.nu_y])
        return np.hstack([self.z, self.nu_z])

    def final_estimates(self) -> np.ndarray:
        return self.estimate[-1].copy()

    def final_error(self) -> float:
        return float(np.max(np.abs(self.estimate[-1] - self.config.init.target)))

    def mass_defect(self) -> tuple[np.ndarray, np.ndarray]:
        """Per round ``|sum(nodes) + sum(buffers) - initial total|`` for y and for z."""
        dy = np.abs(self.y.sum(axis=1) + self.nu_y.sum(axis=1) - self.config.init.y0.sum())
        dz = np.abs(self.z.sum(axis=1) + self.nu_z.sum(axis=1) - self.config.init.z0.sum())
        return dy, dz


def resolve_gating(config: RunConfig, c: float | None = None, l: int | None = None) -> GatingPolicy:
    """Fill in per-node thresholds when threshold gating has no explicit mu."""
    policy = config.gating
    if policy.mode is not Gate.THRESHOLD or policy.mu is not None:
        return policy
    from .ergodicity import derive_block_length, derive_c

    g = config.graph
    c = derive_c(g) if c is None else c
    l = derive_block_length(g) if l is None else l
    return GatingPolicy.threshold(tuple(mu_for_node(g, config.init.z0, i, c, l) for i in range(g.m)))


def robust_round(states: list[NodeState], g: GraphSpec, mask: DropMask) -> list[NodeState]:
    """Advance all nodes one round in place and return them."""
    # every broadcast is computed from last round's masses before any delivery
    messages = [robust_broadcast_phase(s, g, s.node) for s in states]
    ok = mask.reliable
    slot = g.buffer_position
    for s in states:
        i = s.node
        deliveries = {
            j: messages[j] for j in g.in_neighbors[i] if j == i or ok[slot[(j, i)] - g.m]
        }
        robust_receive_phase(s, deliveries)
    return states


def _buffer_masses(states: Sequence[NodeState], g: GraphSpec) -> tuple[np.ndarray, np.ndarray]:
    nu_y = np.array([states[e.source].sigma_y - states[e.target].rho_y[e.source] for e in g.buffer_edges])
    nu_z = np.array([states[e.source].sigma_z - states[e.target].rho_z[e.source] for e in g.buffer_edges])
    return nu_y, nu_z


def _execute(config: RunConfig, masks: Iterable[DropMask]) -> Trace:
    g = config.graph
    K = config.steps
    nb = len(g.buffer_edges)
    policy = resolve_gating(config)
    states = config.init.states(g)

    y = np.zeros((K + 1, g.m))
    z = np.zeros((K + 1, g.m))
    nu_y = np.zeros((K + 1, nb))
    nu_z = np.zeros((K + 1, nb))
    est = np.full((K + 1, g.m), np.nan)
    gated = np.zeros((K + 1, g.m), dtype=bool)
    y[0] = config.init.y0
    z[0] = config.init.z0

    recorded = []
    for k, mask in enumerate(masks, start=1):
        mask.check(g)
        if config.mode is Mode.IDEAL:
            states = ideal_step(states, g)
        else:
            states = robust_round(states, g, mask)
            nu_y[k], nu_z[k] = _buffer_masses(states, g)
        for s in states:
            gated[k, s.node] = compute_estimate(s, policy, k) is not None
            if s.estimate is not None:
                est[k, s.node] = s.estimate
        y[k] = [s.y for s in states]
        z[k] = [s.z for s in states]
        recorded.append(mask)
    if len(recorded) != K:
        raise ValueError(f"expected {K} masks, got {len(recorded)}")

    return Trace(
        graph=g,
        config=config,
        masks=recorded,
        y=y,
        z=z,
        nu_y=nu_y,
        nu_z=nu_z,
        estimate=est,
        gated=gated,
        update_times=[list(s.update_times) for s in states],
    )


def draw_masks(config: RunConfig) -> list[DropMask]:
    """The mask sequence ``run(config)`` uses."""
    g = config.graph
    if config.mode is Mode.IDEAL:
        return [all_reliable(g, k) for k in range(1, config.steps + 1)]
    rng = make_rng(config.seed, config.run_index)
    return [draw_mask(g, rng, k) for k in range(1, config.steps + 1)]


def run(config: RunConfig) -> Trace:
    """Simulate ``config.steps`` rounds with masks drawn from the config's seed."""
    return _execute(config, draw_masks(config))


def replay(config: RunConfig, masks: Sequence[DropMask]) -> Trace:
    """Simulate with an explicit mask sequence (one per round)."""
    if len(masks) != config.steps:
        raise ValueError(f"expected {config.steps} masks, got {len(masks)}")
    return _execute(config, masks)


def _fmt(x: float) -> str:
    return "" if np.isnan(x) else format(float(x), ".17g")


def write_trace_csv(trace: Trace, fh: TextIO) -> None:
    """Rows ``k, entity, kind, y, z, estimate, gated`` in canonical index order."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "entity", "kind", "y", "z", "estimate", "gated"])
    space = augmented_space(trace.graph)
    m = trace.graph.m
    for k in range(trace.steps + 1):
        for entry in space:
            p = entry.position
            if entry.kind == "node":
                w.writerow([k, entry.label(), "node", _fmt(trace.y[k, p]), _fmt(trace.z[k, p]),
                            _fmt(trace.estimate[k, p]), int(trace.gated[k, p])])
            else:
                w.writerow([k, entry.label(), "buffer", _fmt(trace.nu_y[k, p - m]),
                            _fmt(trace.nu_z[k, p - m]), "", ""])


def write_masks_csv(g: GraphSpec, masks: Sequence[DropMask], fh: TextIO) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "from", "to", "reliable"])
    for mask in masks:
        for e, x in zip(g.buffer_edges, mask.reliable):
            w.writerow([mask.round, e.source + 1, e.target + 1, int(x)])


def read_masks_csv(g: GraphSpec, fh: TextIO) -> list[DropMask]:
    rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    header, body = rows[0], rows[1:]
    if header != ["k", "from", "to", "reliable"]:
        raise ValueError(f"unexpected mask header {header}")
    by_round: dict[int, dict[tuple[int, int], bool]] = {}
    for k, s, t, x in body:
        by_round.setdefault(int(k), {})[(int(s) - 1, int(t) - 1)] = x == "1"
    masks = []
    for k in sorted(by_round):
        table = by_round[k]
        if set(table) != {(e.source, e.target) for e in g.buffer_edges}:
            raise ValueError(f"round {k} does not list exactly the graph's links")
        masks.append(DropMask(k, [table[(e.source, e.target)] for e in g.buffer_edges]))
    return masks
