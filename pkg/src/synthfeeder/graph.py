"""Device-as-node feeder graphs and radiality checks.

Every physical device (line segment) is a node; a directed edge ``(p, c)``
says power flows from device ``p`` into device ``c``. A valid feeder is a
directed tree: acyclic, connected, and every node except the head has
exactly one parent.
"""
from __future__ import annotations

import enum
from collections import Counter, deque
from dataclasses import dataclass, field, replace
from typing import Iterable

LEVEL_CAP = 10


class Phase(str, enum.Enum):
    A = "a"
    B = "b"
    C = "c"
    AB = "ab"
    AC = "ac"
    BC = "bc"
    ABC = "abc"

    @property
    def letters(self) -> frozenset[str]:
        return frozenset(self.value)

    @property
    def count(self) -> int:
        return len(self.value)

    @property
    def index(self) -> int:
        return PHASES.index(self)


# One-hot slot order for the phase feature.
PHASES: tuple[Phase, ...] = tuple(Phase)


@dataclass(frozen=True)
class DeviceNode:
    """One device of a feeder together with its attribute vector.

    ``xfmr_kva`` is the customer transformer capacity attached at the
    device's far end (0 when there is none); ``pseudo_load`` aggregates it
    over the downstream set.
    """

    id: int
    length: float
    norm_amps: float
    phase: Phase
    distance: float = 0.0
    pseudo_load: float = 0.0
    level: int = 0
    xfmr_kva: float = 0.0
    name: str = ""

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", f"L{self.id}")
        object.__setattr__(self, "phase", Phase(self.phase))
        if self.length < 0:
            raise ValueError(f"node {self.id}: length must be >= 0, got {self.length}")
        if not self.norm_amps > 0:
            raise ValueError(f"node {self.id}: norm_amps must be > 0, got {self.norm_amps}")
        if self.distance < 0 or self.pseudo_load < 0 or self.xfmr_kva < 0:
            raise ValueError(f"node {self.id}: distance, pseudo_load and xfmr_kva must be >= 0")
        if self.level < 0:
            raise ValueError(f"node {self.id}: level must be >= 0")


@dataclass(frozen=True)
class FeederGraph:
    """Directed feeder graph with dense node ids ``0..m-1``.

    Construction does not enforce radiality; use :func:`validate_radial`.
    """

    nodes: tuple[DeviceNode, ...]
    edges: frozenset[tuple[int, int]]
    head: int
    _children: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset(self.edges))
        m = len(self.nodes)
        for i, node in enumerate(self.nodes):
            if node.id != i:
                raise ValueError(f"node at position {i} has id {node.id}; ids must be dense 0..m-1")
        for p, c in self.edges:
            if not (0 <= p < m and 0 <= c < m):
                raise ValueError(f"edge {(p, c)} references an unknown node")
        if m and not 0 <= self.head < m:
            raise ValueError(f"head {self.head} is not a node")
        children: dict[int, list[int]] = {i: [] for i in range(m)}
        for p, c in sorted(self.edges):
            children[p].append(c)
        object.__setattr__(self, "_children", children)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def m(self) -> int:
        return len(self.nodes)

    def children(self, v: int) -> list[int]:
        """Children of ``v`` in ascending id order."""
        return list(self._children[v])

    def parent_map(self) -> dict[int, int]:
        return {c: p for p, c in self.edges}

    def out_degree(self, v: int) -> int:
        return len(self._children[v])

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def with_nodes(self, nodes: Iterable[DeviceNode]) -> "FeederGraph":
        return FeederGraph(tuple(nodes), self.edges, self.head)

    def update_nodes(self, **per_node: list) -> "FeederGraph":
        """Return a copy with the named node fields replaced position-wise."""
        m = len(self.nodes)
        for key, values in per_node.items():
            if len(values) != m:
                raise ValueError(f"{key}: expected {m} values, got {len(values)}")
        nodes = [
            replace(node, **{k: v[i] for k, v in per_node.items()})
            for i, node in enumerate(self.nodes)
        ]
        return self.with_nodes(nodes)

    def bfs_order(self) -> list[int]:
        """Head first, then :func:`downstream` order."""
        return [self.head] + downstream(self, self.head)


@dataclass(frozen=True)
class Violation:
    rule: str
    nodes: tuple[int, ...]
    message: str


def _reachable(g: FeederGraph, start: int) -> list[int]:
    seen = {start}
    order = []
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for c in g.children(v):
            if c not in seen:
                seen.add(c)
                order.append(c)
                queue.append(c)
    return order


def validate_radial(g: FeederGraph) -> list[Violation]:
    """List every way ``g`` fails to be a directed radial tree rooted at its head.

    An empty list means the graph is acyclic, connected and every node but
    the head has in-degree one.
    """
    if not g.nodes:
        raise ValueError("graph has no nodes")
    out: list[Violation] = []
    m = g.m
    indeg = Counter(c for _, c in g.edges)

    roots = [v for v in range(m) if indeg[v] == 0]
    if indeg[g.head] != 0:
        out.append(Violation("head-in-degree", (g.head,),
                             f"head {g.head} has in-degree {indeg[g.head]}, expected 0"))
    extra_roots = tuple(v for v in roots if v != g.head)
    if extra_roots:
        out.append(Violation("multiple-heads", extra_roots,
                             f"nodes {list(extra_roots)} have in-degree 0 but are not the head"))
    for v in range(m):
        if v != g.head and indeg[v] > 1:
            out.append(Violation("in-degree", (v,), f"node {v} has in-degree {indeg[v]}, expected 1"))

    # Cycles: iterative colouring DFS; each distinct cycle reported once.
    colour = [0] * m
    seen_cycles: set[frozenset[int]] = set()
    for root in range(m):
        if colour[root]:
            continue
        stack = [(root, iter(g.children(root)))]
        path = [root]
        colour[root] = 1
        while stack:
            v, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                colour[v] = 2
                stack.pop()
                path.pop()
                continue
            if colour[nxt] == 1:
                cyc = tuple(path[path.index(nxt):])
                key = frozenset(cyc)
                if key not in seen_cycles:
                    seen_cycles.add(key)
                    out.append(Violation("cycle", cyc, f"cycle through nodes {list(cyc)}"))
            elif colour[nxt] == 0:
                colour[nxt] = 1
                path.append(nxt)
                stack.append((nxt, iter(g.children(nxt))))

    reached = set(_reachable(g, g.head)) | {g.head}
    missing = tuple(v for v in range(m) if v not in reached)
    if missing:
        out.append(Violation("disconnected", missing,
                             f"nodes {list(missing)} are not reachable from head {g.head}"))
    return out


def is_radial(g: FeederGraph) -> bool:
    return not validate_radial(g)


def downstream(g: FeederGraph, v: int) -> list[int]:
    """All nodes reachable from ``v``, excluding ``v``, in BFS order with
    children visited in ascending id."""
    if not 0 <= v < g.m:
        raise KeyError(f"unknown node id {v}")
    return _reachable(g, v)


def out_degree_histogram(g: FeederGraph) -> dict[int, float]:
    if not g.nodes:
        raise ValueError("graph has no nodes")
    counts = Counter(g.out_degree(v) for v in range(g.m))
    return {d: counts[d] / g.m for d in sorted(counts)}


def chain(lengths: Iterable[float], norm_amps: float = 200.0, phase: Phase = Phase.ABC) -> FeederGraph:
    """Convenience: a straight feeder ``0 -> 1 -> ... -> n-1``."""
    lengths = list(lengths)
    nodes = tuple(DeviceNode(i, float(l), norm_amps, phase) for i, l in enumerate(lengths))
    edges = frozenset((i, i + 1) for i in range(len(lengths) - 1))
    return FeederGraph(nodes, edges, 0)


def from_parent_map(parents: dict[int, int], m: int, head: int, **attrs) -> FeederGraph:
    """Build a graph of ``m`` default nodes from ``child -> parent``."""
    length = attrs.get("length", 100.0)
    norm_amps = attrs.get("norm_amps", 200.0)
    phase = attrs.get("phase", Phase.ABC)
    nodes = tuple(DeviceNode(i, length, norm_amps, phase) for i in range(m))
    return FeederGraph(nodes, frozenset((p, c) for c, p in parents.items()), head)
