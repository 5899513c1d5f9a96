"""Directed communication graphs with per-link reliability.

Node ids are 0-based everywhere inside the package; graph documents and
CSV exports use 1-based ids and convert at the boundary.
"""

from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class GraphError(ValueError):
    """Base class for rejected graph documents."""


class GraphParseError(GraphError):
    pass


class DuplicateEdgeError(GraphError):
    pass


class ReliabilityError(GraphError):
    pass


class NotStronglyConnectedError(GraphError):
    pass


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    q: float = 1.0

    @property
    def is_self_loop(self) -> bool:
        return self.source == self.target


@dataclass(frozen=True)
class GraphSpec:
    """Validated, immutable directed graph with self-loops at every node.

    ``edges`` holds every link in canonical order: sorted by
    ``(source, target)``, self-loops included with ``q == 1``.
    Construct through :func:`make_graph` or :func:`load_graph`.
    """

    m: int
    edges: tuple[Edge, ...]

    @cached_property
    def buffer_edges(self) -> tuple[Edge, ...]:
        """Non-self-loop edges in canonical order; one virtual buffer each."""
        return tuple(e for e in self.edges if not e.is_self_loop)

    @cached_property
    def out_neighbors(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.m)]
        for e in self.edges:
            out[e.source].append(e.target)
        return tuple(tuple(o) for o in out)

    @cached_property
    def in_neighbors(self) -> tuple[tuple[int, ...], ...]:
        inc: list[list[int]] = [[] for _ in range(self.m)]
        for e in self.edges:
            inc[e.target].append(e.source)
        return tuple(tuple(sorted(i)) for i in inc)

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.array([len(o) for o in self.out_neighbors], dtype=np.int64)

    @cached_property
    def q_buffers(self) -> np.ndarray:
        return np.array([e.q for e in self.buffer_edges], dtype=float)

    @cached_property
    def buffer_position(self) -> dict[tuple[int, int], int]:
        """Map ``(source, target)`` to the buffer's augmented index."""
        return {(e.source, e.target): self.m + b for b, e in enumerate(self.buffer_edges)}

    @property
    def n(self) -> int:
        return self.m + len(self.buffer_edges)

    def with_reliability(self, q: float) -> GraphSpec:
        """Copy of the graph with every non-self-loop link set to ``q``."""
        return make_graph(self.m, [(e.source, e.target, q) for e in self.buffer_edges])

    def to_document(self) -> dict:
        """Graph document (1-based ids) suitable for ``json.dumps``."""
        return {
            "m": self.m,
            "edges": [
                {"from": e.source + 1, "to": e.target + 1, "q": e.q}
                for e in self.buffer_edges
            ],
        }

    def digest(self) -> str:
        payload = json.dumps(self.to_document(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


def _reachable(m: int, adjacency: Sequence[Iterable[int]], start: int = 0) -> set[int]:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def make_graph(m: int, edges: Iterable[tuple[int, int, float] | tuple[int, int]]) -> GraphSpec:
    """Build and validate a graph from 0-based ``(source, target[, q])`` triples.

    Self-loops are added when missing. A listed self-loop must have ``q == 1``.

    Raises
    ------
    GraphParseError
        Node ids out of range or a non-positive node count.
    DuplicateEdgeError
        The same directed link listed twice.
    ReliabilityError
        ``q`` outside ``(0, 1]`` or a self-loop with ``q != 1``.
    NotStronglyConnectedError
        Some node cannot reach, or be reached from, node 0.
    """
    if isinstance(m, bool) or not isinstance(m, (int, np.integer)) or m < 1:
        raise GraphParseError(f"node count must be a positive integer, got {m!r}")
    m = int(m)
    table: dict[tuple[int, int], float] = {}
    for raw in edges:
        if len(raw) == 2:
            s, t = raw
            q = 1.0
        else:
            s, t, q = raw
        s, t = int(s), int(t)
        if not (0 <= s < m and 0 <= t < m):
            raise GraphParseError(f"edge ({s + 1},{t + 1}) references a node outside 1..{m}")
        if (s, t) in table:
            raise DuplicateEdgeError(f"duplicate edge ({s + 1},{t + 1})")
        q = float(q)
        if not (0.0 < q <= 1.0):
            raise ReliabilityError(f"edge ({s + 1},{t + 1}) has q={q}, expected 0 < q <= 1")
        if s == t and q != 1.0:
            raise ReliabilityError(f"self-loop ({s + 1},{s + 1}) must have q=1, got {q}")
        table[(s, t)] = q
    for i in range(m):
        table.setdefault((i, i), 1.0)

    forward: list[list[int]] = [[] for _ in range(m)]
    backward: list[list[int]] = [[] for _ in range(m)]
    for s, t in table:
        forward[s].append(t)
        backward[t].append(s)
    if len(_reachable(m, forward)) != m or len(_reachable(m, backward)) != m:
        raise NotStronglyConnectedError("graph is not strongly connected")

    ordered = tuple(Edge(s, t, table[(s, t)]) for s, t in sorted(table))
    return GraphSpec(m=m, edges=ordered)


def parse_graph_document(doc: Mapping) -> GraphSpec:
    """Validate a decoded graph document (1-based ids)."""
    if not isinstance(doc, Mapping) or "m" not in doc or "edges" not in doc:
        raise GraphParseError("graph document needs top-level 'm' and 'edges'")
    m = doc["m"]
    if isinstance(m, bool) or not isinstance(m, int):
        raise GraphParseError(f"'m' must be an integer, got {m!r}")
    if not isinstance(doc["edges"], list):
        raise GraphParseError("'edges' must be an array")
    triples = []
    for k, item in enumerate(doc["edges"]):
        try:
            s, t = item["from"], item["to"]
            q = item.get("q", 1.0)
        except (TypeError, KeyError, AttributeError) as exc:
            raise GraphParseError(f"edge #{k} must be an object with 'from' and 'to'") from exc
        if any(isinstance(v, bool) or not isinstance(v, int) for v in (s, t)):
            raise GraphParseError(f"edge #{k} endpoints must be integers")
        if isinstance(q, bool) or not isinstance(q, (int, float)):
            raise GraphParseError(f"edge #{k} has non-numeric q")
        triples.append((s - 1, t - 1, q))
    return make_graph(m, triples)


def load_graph(source: str | Path | Mapping) -> GraphSpec:
    """Load a graph from a JSON document, a path to one, or a decoded mapping.

    Examples
    --------
    >>> g = load_graph('{"m": 2, "edges": [{"from": 1, "to": 2, "q": 0.9},'
    ...                ' {"from": 2, "to": 1, "q": 0.9}]}')
    >>> g.m, len(g.edges)
    (2, 4)
    """
    if isinstance(source, Mapping):
        return parse_graph_document(source)
    if isinstance(source, Path) or not str(source).lstrip().startswith("{"):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"malformed graph document: {exc}") from exc
    return parse_graph_document(doc)


def out_degree(g: GraphSpec, i: int) -> int:
    """Number of out-neighbors of node ``i``, self-loop included."""
    if not 0 <= i < g.m:
        raise KeyError(f"unknown node {i}")
    return int(g.degrees[i])


@dataclass(frozen=True)
class AugmentedIndex:
    """One entity of the augmented network: a node or a link buffer."""

    position: int
    node: int | None = None
    link: tuple[int, int] | None = None

    @property
    def kind(self) -> str:
        return "node" if self.link is None else "buffer"

    def label(self) -> str:
        """1-based label used in exports, e.g. ``3`` or ``1->2``."""
        if self.link is None:
            return str(self.node + 1)
        return f"{self.link[0] + 1}->{self.link[1] + 1}"


@dataclass(frozen=True)
class AugmentedSpace:
    entries: tuple[AugmentedIndex, ...]
    _lookup: dict = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, position: int) -> AugmentedIndex:
        return self.entries[position]

    def __iter__(self):
        return iter(self.entries)

    def position_of(self, entity: int | tuple[int, int]) -> int:
        """Index of a node id or of a ``(source, target)`` buffer."""
        return self._lookup[entity]

    def labels(self) -> list[str]:
        return [e.label() for e in self.entries]


def augmented_space(g: GraphSpec) -> AugmentedSpace:
    """Canonical indexing: nodes ``0..m-1``, then buffers in edge order."""
    entries = [AugmentedIndex(position=i, node=i) for i in range(g.m)]
    entries += [
        AugmentedIndex(position=g.m + b, link=(e.source, e.target))
        for b, e in enumerate(g.buffer_edges)
    ]
    lookup: dict = {i: i for i in range(g.m)}
    lookup.update({entry.link: entry.position for entry in entries[g.m:]})
    return AugmentedSpace(entries=tuple(entries), _lookup=lookup)


# Topology builders used by the CLI, tests and examples.

def ring(m: int, q: float = 1.0) -> GraphSpec:
    """Directed ring ``0 -> 1 -> ... -> m-1 -> 0``."""
    return make_graph(m, [(i, (i + 1) % m, q) for i in range(m) if m > 1])


def complete(m: int, q: float = 1.0) -> GraphSpec:
    return make_graph(m, [(i, j, q) for i in range(m) for j in range(m) if i != j])


def star(leaves: int, q: float = 1.0) -> GraphSpec:
    """Hub 0 linked both ways to every leaf."""
    edges = []
    for leaf in range(1, leaves + 1):
        edges += [(0, leaf, q), (leaf, 0, q)]
    return make_graph(leaves + 1, edges)


def random_graph(
    m: int,
    rng: np.random.Generator,
    edge_prob: float = 0.3,
    q_range: tuple[float, float] = (0.3, 1.0),
) -> GraphSpec:
    """Random strongly connected graph: a shuffled Hamiltonian cycle plus extras."""
    order = rng.permutation(m)
    links = {(int(order[k]), int(order[(k + 1) % m])) for k in range(m)} if m > 1 else set()
    for i in range(m):
        for j in range(m):
            if i != j and rng.random() < edge_prob:
                links.add((i, j))
    lo, hi = q_range
    return make_graph(m, [(s, t, float(rng.uniform(lo, hi))) for s, t in sorted(links)])
