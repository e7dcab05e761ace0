"""Turn generator output back into radial feeders with physical attributes."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .graph import PHASES, DeviceNode, FeederGraph, Phase
from .ingest import FeatureScales, RawDevice, RawFeederModel, decode_numeric

NORMAMPS_TABLE = (100.0, 150.0, 200.0, 230.0, 300.0, 340.0, 400.0, 530.0, 600.0, 700.0)
SOURCE_BUS = "sourcebus"


@dataclass
class SoftGraph:
    a_soft: np.ndarray
    x_num: np.ndarray
    x_cat_level: np.ndarray
    x_cat_phase: np.ndarray

    def __post_init__(self):
        m = self.a_soft.shape[0]
        if self.a_soft.shape != (m, m):
            raise ValueError("soft adjacency must be square")
        for name in ("x_num", "x_cat_level", "x_cat_phase"):
            arr = getattr(self, name)
            if arr.shape[0] != m:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {m}")
        if not all(np.isfinite(a).all() for a in (self.a_soft, self.x_num, self.x_cat_level, self.x_cat_phase)):
            raise ValueError("soft graph contains non-finite values")

    @property
    def m(self) -> int:
        return self.a_soft.shape[0]

    @classmethod
    def from_generated(cls, gen) -> "SoftGraph":
        return cls(*(np.array(x) for x in gen.arrays()))


def reconstruct_adjacency(a_soft) -> np.ndarray:
    """Binary directed adjacency with exactly one 1 per column.

    1. For every pair ``i <= j`` keep the larger of ``a[i,j]`` and
       ``a[j,i]`` and zero the other (ties keep ``a[i,j]``). The diagonal
       pair compares an entry with itself, so self loops are removed.
    2. Divide each nonzero row by its sum.
    3. In each column put a 1 at the largest entry (smallest row index on
       ties) and zero the rest. A column left entirely zero by step 1 gets
       its 1 on the diagonal, marking a node without a parent.
    """
    a = np.array(a_soft, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"soft adjacency must be square, got shape {a.shape}")
    if not np.isfinite(a).all() or (a < 0).any() or (a > 1).any():
        raise ValueError("soft adjacency entries must lie in [0, 1]")
    m = a.shape[0]
    upper = np.triu(np.ones((m, m), dtype=bool), 1)
    keep_upper = a >= a.T  # evaluated at [i, j] for i < j
    b = np.zeros_like(a)
    b[upper & keep_upper] = a[upper & keep_upper]
    lower_keep = (upper & ~keep_upper).T
    b[lower_keep] = a[lower_keep]

    sums = b.sum(axis=1, keepdims=True)
    np.divide(b, sums, out=b, where=sums > 0)

    out = np.zeros_like(b)
    cols = np.arange(m)
    rows = np.argmax(b, axis=0)
    empty = ~(b > 0).any(axis=0)
    rows[empty] = cols[empty]
    out[rows, cols] = 1.0
    return out


def _bfs(adj: np.ndarray, head: int) -> list[int]:
    seen = np.zeros(adj.shape[0], dtype=bool)
    seen[head] = True
    order = [head]
    queue = deque([head])
    while queue:
        v = queue.popleft()
        for c in np.flatnonzero(adj[v]):
            if not seen[c]:
                seen[c] = True
                order.append(int(c))
                queue.append(int(c))
    return order


@dataclass
class CandidateTopology:
    graph: FeederGraph
    head: int
    source: SoftGraph | None = None


def default_nodes(m: int) -> list[DeviceNode]:
    return [DeviceNode(i, 0.0, 1.0, Phase.ABC) for i in range(m)]


def head_candidates(a_tilde: np.ndarray) -> list[int]:
    """Rows with at least one nonzero entry, i.e. admissible feeder heads."""
    return [int(i) for i in np.flatnonzero((np.asarray(a_tilde) != 0).any(axis=1))]


def permute_feeder_head(a_tilde, nodes=None, source: SoftGraph | None = None) -> list[CandidateTopology]:
    """Try each nonzero row as the feeder head; keep the ones reaching every node.

    ``nodes`` supplies per-node attributes (default placeholders).
    """
    a_tilde = np.asarray(a_tilde)
    m = a_tilde.shape[0]
    nodes = tuple(default_nodes(m) if nodes is None else nodes)
    out = []
    for head in head_candidates(a_tilde):
        b = a_tilde.copy()
        b[:, head] = 0
        if len(_bfs(b, head)) != m:
            continue
        edges = frozenset((int(p), int(c)) for p, c in zip(*np.nonzero(b)))
        out.append(CandidateTopology(FeederGraph(nodes, edges, head), head, source))
    return out


def canonical(g: FeederGraph) -> FeederGraph:
    """Relabel nodes in BFS order so the head becomes node 0."""
    order = g.bfs_order()
    if len(order) != g.m:
        raise ValueError("graph is not connected from its head")
    new_id = {old: k for k, old in enumerate(order)}
    nodes = []
    for k, old in enumerate(order):
        n = g.nodes[old]
        nodes.append(DeviceNode(k, n.length, n.norm_amps, n.phase, n.distance, n.pseudo_load,
                                n.level, n.xfmr_kva, n.name))
    edges = frozenset((new_id[p], new_id[c]) for p, c in g.edges)
    return FeederGraph(tuple(nodes), edges, 0)


def bus_name(device_name: str) -> str:
    return f"b_{device_name}"


def node_to_edge(g: FeederGraph) -> RawFeederModel:
    """Bus-edge model of a device-as-node graph (inverse of device_as_node).

    Each device ends at its own bus and starts at its parent's end bus, or at
    the source bus for the head. Devices are listed in BFS order.
    """
    from .graph import validate_radial

    problems = validate_radial(g)
    if problems:
        raise ValueError(f"graph is not radial: {problems[0].message}")
    parent = g.parent_map()
    order = g.bfs_order()
    names = [g.nodes[v].name for v in order]
    if len(set(names)) != len(names):
        raise ValueError("device names must be unique")
    devices = []
    for v in order:
        n = g.nodes[v]
        start = SOURCE_BUS if v == g.head else bus_name(g.nodes[parent[v]].name)
        devices.append(RawDevice(n.name, start, bus_name(n.name), n.phase, n.length, n.norm_amps,
                                 n.xfmr_kva if n.xfmr_kva else None))
    buses = (SOURCE_BUS,) + tuple(bus_name(n) for n in names)
    return RawFeederModel(buses, tuple(devices), SOURCE_BUS)


@dataclass
class NodeAttributes:
    length: np.ndarray
    norm_amps: np.ndarray
    phase: list[Phase]
    level: np.ndarray


def snap(values, table) -> np.ndarray:
    """Nearest table entry for each value; ties go to the smaller entry."""
    table = np.sort(np.asarray(table, dtype=float))
    if table.size == 0:
        raise ValueError("norm_amps lookup table is empty")
    values = np.asarray(values, dtype=float)
    idx = np.argmin(np.abs(values[:, None] - table[None, :]), axis=1)
    return table[idx]


def reconstruct_attributes(x_num, x_cat_level, x_cat_phase, scales: FeatureScales,
                           normamps_table=NORMAMPS_TABLE) -> NodeAttributes:
    """Physical organic attributes from generator scores.

    Length maps affinely from [-1, 1] onto the length scale (default
    [0, 800] m); norm_amps snaps to the nearest line-code value; phase and
    level are the row argmax.
    """
    if len(normamps_table) == 0:
        raise ValueError("norm_amps lookup table is empty")
    x_num = np.clip(np.asarray(x_num, dtype=float), -1.0, 1.0)
    decoded = decode_numeric(x_num, scales)
    return NodeAttributes(
        length=np.maximum(decoded["length"], 0.0),
        norm_amps=snap(decoded["norm_amps"], normamps_table),
        phase=[PHASES[k] for k in np.argmax(x_cat_phase, axis=1)],
        level=np.argmax(x_cat_level, axis=1),
    )


def attribute_nodes(attrs: NodeAttributes) -> list[DeviceNode]:
    return [DeviceNode(i, float(attrs.length[i]), float(attrs.norm_amps[i]), attrs.phase[i],
                       level=int(attrs.level[i]))
            for i in range(len(attrs.phase))]


def admissible_children(parent: Phase) -> list[Phase]:
    """Phases allowed downstream of ``parent``: letter subsets, in slot order."""
    return [p for p in PHASES if p.letters <= parent.letters]


def assign_phases_guided(topology: FeederGraph, phase_scores) -> FeederGraph:
    """Head gets ``abc``; single children inherit; each child at a bifurcation
    takes the best-scoring phase admissible under its parent."""
    scores = np.asarray(phase_scores, dtype=float)
    if scores.shape != (topology.m, len(PHASES)):
        raise ValueError(f"phase scores must be {topology.m}x{len(PHASES)}")
    phase = [None] * topology.m
    phase[topology.head] = Phase.ABC
    for v in topology.bfs_order():
        kids = topology.children(v)
        for c in kids:
            if len(kids) < 2:
                phase[c] = phase[v]
            else:
                options = admissible_children(phase[v])
                best = max(options, key=lambda p: (scores[c, p.index], -p.index))
                phase[c] = best
    if any(p is None for p in phase):
        raise ValueError("topology is not connected from its head")
    return topology.update_nodes(phase=phase)
