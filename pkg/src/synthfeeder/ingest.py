"""Feeder file parsing, bus-to-device conversion, features and tensor encoding.

Feeder files are UTF-8, line oriented, ``#`` starts a comment::

    source <bus>
    device <name> from=<bus> to=<bus> phase=<phase> length_m=<m> normamps=<A> [xfmr_kva=<kVA>]

Buses are declared implicitly by the devices that touch them and by the
``source`` statement.
"""
from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import LEVEL_CAP, PHASES, DeviceNode, FeederGraph, Phase

log = logging.getLogger(__name__)

NUMERIC_FEATURES = ("length", "norm_amps", "distance", "pseudo_load")
N_PHASES = len(PHASES)


class FeederFormatError(ValueError):
    """A feeder file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class TopologyError(ValueError):
    """Bus network violates the radial (loop-free, single source) assumption."""


@dataclass(frozen=True)
class RawDevice:
    name: str
    bus_from: str
    bus_to: str
    phase: Phase
    length: float
    norm_amps: float
    xfmr_kva: float | None = None


@dataclass(frozen=True)
class RawFeederModel:
    """Bus-as-node, device-as-edge feeder as read from a file."""

    buses: tuple[str, ...]
    devices: tuple[RawDevice, ...]
    source_bus: str

    def __post_init__(self):
        declared = set(self.buses)
        if self.source_bus not in declared:
            raise FeederFormatError(f"source bus {self.source_bus!r} is not declared")
        for d in self.devices:
            for bus in (d.bus_from, d.bus_to):
                if bus not in declared:
                    raise FeederFormatError(f"device {d.name!r} references undeclared bus {bus!r}")


_DEVICE_KEYS = {"from", "to", "phase", "length_m", "normamps", "xfmr_kva"}


def _number(text: str, key: str, lineno: int, path: str | None = None) -> float:
    try:
        value = float(text)
    except ValueError:
        raise FeederFormatError(f"malformed numeric field {key}={text!r}", lineno, path) from None
    if not math.isfinite(value):
        raise FeederFormatError(f"non-finite numeric field {key}={text!r}", lineno, path)
    return value


def parse_feeder_file(text: str, path: str | None = None) -> RawFeederModel:
    """Parse feeder-file text into a :class:`RawFeederModel`.

    Raises :class:`FeederFormatError` naming the line on a missing source
    declaration, an undeclared bus, a malformed number or a duplicate name.
    """
    source: str | None = None
    source_line = None
    pending: list[tuple[int, dict]] = []
    names: set[str] = set()

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        words = line.split()
        kind = words[0].lower()
        if kind == "source":
            if len(words) != 2:
                raise FeederFormatError("expected 'source <bus_name>'", lineno, path)
            if source is not None:
                raise FeederFormatError(f"duplicate source declaration (first on line {source_line})",
                                        lineno, path)
            source, source_line = words[1], lineno
        elif kind == "device":
            if len(words) < 2 or "=" in words[1]:
                raise FeederFormatError("device statement needs a name", lineno, path)
            name = words[1]
            if name in names:
                raise FeederFormatError(f"duplicate device name {name!r}", lineno, path)
            names.add(name)
            kv = {}
            for tok in words[2:]:
                if "=" not in tok:
                    raise FeederFormatError(f"expected key=value, got {tok!r}", lineno, path)
                k, v = tok.split("=", 1)
                k = k.lower()
                if k not in _DEVICE_KEYS:
                    log.warning("line %d: ignoring unknown key %r", lineno, k)
                    continue
                kv[k] = v
            for req in ("from", "to", "phase", "length_m", "normamps"):
                if req not in kv:
                    raise FeederFormatError(f"device {name!r} is missing {req}=", lineno, path)
            pending.append((lineno, {"name": name, **kv}))
        else:
            log.warning("line %d: ignoring unknown statement %r", lineno, words[0])

    if source is None:
        raise FeederFormatError("missing 'source <bus>' declaration", None, path)

    buses = [source]
    declared = {source}
    devices = []
    for lineno, kv in pending:
        try:
            phase = Phase(kv["phase"].lower())
        except ValueError:
            raise FeederFormatError(f"unknown phase {kv['phase']!r}", lineno, path) from None
        length = _number(kv["length_m"], "length_m", lineno, path)
        amps = _number(kv["normamps"], "normamps", lineno, path)
        kva = _number(kv["xfmr_kva"], "xfmr_kva", lineno, path) if "xfmr_kva" in kv else None
        if length < 0 or amps <= 0 or (kva is not None and kva < 0):
            raise FeederFormatError("length_m and xfmr_kva must be >= 0 and normamps > 0", lineno, path)
        devices.append(RawDevice(kv["name"], kv["from"], kv["to"], phase, length, amps, kva))
        for bus in (kv["from"], kv["to"]):
            if bus not in declared:
                declared.add(bus)
                buses.append(bus)

    # A bus that is only ever a 'from' endpoint (other than the source) is
    # never fed by anything: it is undeclared.
    fed = {d.bus_to for d in devices} | {source}
    for (lineno, _), d in zip(pending, devices):
        if d.bus_from not in fed:
            raise FeederFormatError(f"device {d.name!r} references undeclared bus {d.bus_from!r}",
                                    lineno, path)
    return RawFeederModel(tuple(buses), tuple(devices), source)


def read_feeder_file(path: str | Path) -> RawFeederModel:
    path = Path(path)
    return parse_feeder_file(path.read_text(encoding="utf-8"), path=str(path))


def device_as_node(raw: RawFeederModel, level_cap: int = LEVEL_CAP) -> FeederGraph:
    """Turn a bus-edge model into a device-as-node graph.

    Node ``i`` is ``raw.devices[i]``; edge ``(i, j)`` exists when device
    ``j`` starts at the bus where device ``i`` ends. Topological features
    are left at zero; see :func:`compute_topological_features`.
    """
    devices = raw.devices
    if not devices:
        raise TopologyError("feeder has no devices")
    heads = [i for i, d in enumerate(devices) if d.bus_from == raw.source_bus]
    if len(heads) != 1:
        raise TopologyError(f"Assumption 1 violated: expected exactly one device leaving source bus "
                            f"{raw.source_bus!r}, found {len(heads)}")
    into: dict[str, list[int]] = {}
    for i, d in enumerate(devices):
        into.setdefault(d.bus_to, []).append(i)
    for bus, feeders in into.items():
        if len(feeders) > 1 or bus == raw.source_bus:
            raise TopologyError(f"Assumption 1 violated: bus {bus!r} is fed more than once (loop)")
    starting: dict[str, list[int]] = {}
    for i, d in enumerate(devices):
        starting.setdefault(d.bus_from, []).append(i)
    edges = {(i, j) for i, d in enumerate(devices) for j in starting.get(d.bus_to, ())}

    nodes = tuple(
        DeviceNode(i, d.length, d.norm_amps, d.phase, xfmr_kva=d.xfmr_kva or 0.0, name=d.name)
        for i, d in enumerate(devices)
    )
    g = FeederGraph(nodes, frozenset(edges), heads[0])
    reached = len(g.bfs_order())
    if reached != g.m:
        raise TopologyError(f"Assumption 1 violated: {g.m - reached} devices are not reachable "
                            f"from the source (loop or island)")
    return g


def compute_topological_features(g: FeederGraph, level_cap: int = LEVEL_CAP) -> FeederGraph:
    """Fill distance, pseudo_load and level by a BFS from the head.

    distance includes the device's own length; pseudo_load sums
    transformer kVA over the device and everything downstream; level goes
    up by one at a bifurcation child whose norm_amps or phase differs from
    its parent's.
    """
    order = g.bfs_order()
    nodes = g.nodes
    distance = [0.0] * g.m
    level = [0] * g.m
    distance[g.head] = nodes[g.head].length
    for v in order:
        kids = g.children(v)
        branching = len(kids) >= 2
        for c in kids:
            distance[c] = distance[v] + nodes[c].length
            bump = branching and (nodes[c].norm_amps != nodes[v].norm_amps
                                  or nodes[c].phase != nodes[v].phase)
            level[c] = min(level[v] + int(bump), level_cap)
    load = [n.xfmr_kva for n in nodes]
    for v in reversed(order):
        for c in g.children(v):
            load[v] += load[c]
    return g.update_nodes(distance=distance, pseudo_load=load, level=level)


def load_feeder(path: str | Path, level_cap: int = LEVEL_CAP) -> FeederGraph:
    """Read, convert and featurize one feeder file."""
    return compute_topological_features(device_as_node(read_feeder_file(path), level_cap), level_cap)


def adjacency_matrix(g: FeederGraph) -> np.ndarray:
    a = np.zeros((g.m, g.m))
    for p, c in g.edges:
        a[p, c] = 1.0
    return a


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Row-normalize with self loops: ``D^-1 (A + I)`` with ``D_ii = 1 + sum_j A_ij``."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got shape {a.shape}")
    a_hat = a + np.eye(a.shape[0])
    return a_hat / a_hat.sum(axis=1, keepdims=True)


@dataclass
class FeatureScales:
    """Per-feature ``[lo, hi]`` ranges for mapping numeric features to [-1, 1]."""

    lo: dict[str, float]
    hi: dict[str, float]
    level_cap: int = LEVEL_CAP

    @classmethod
    def from_graphs(cls, graphs, length_max: float = 800.0, level_cap: int = LEVEL_CAP) -> "FeatureScales":
        graphs = list(graphs)
        if not graphs:
            raise ValueError("no graphs to compute scales from")
        values = {f: [getattr(n, f) for g in graphs for n in g.nodes] for f in NUMERIC_FEATURES}
        lo = {"length": 0.0, "distance": 0.0, "pseudo_load": 0.0,
              "norm_amps": min(values["norm_amps"])}
        hi = {f: max(values[f]) for f in NUMERIC_FEATURES}
        hi["length"] = max(hi["length"], length_max)
        for f in NUMERIC_FEATURES:
            if hi[f] <= lo[f]:
                hi[f] = lo[f] + 1.0
        return cls(lo, hi, level_cap)

    @property
    def d_level(self) -> int:
        return self.level_cap + 1

    def to_unit(self, feature: str, value):
        lo, hi = self.lo[feature], self.hi[feature]
        return 2.0 * (np.asarray(value, dtype=float) - lo) / (hi - lo) - 1.0

    def from_unit(self, feature: str, score):
        lo, hi = self.lo[feature], self.hi[feature]
        return lo + (np.asarray(score, dtype=float) + 1.0) * 0.5 * (hi - lo)

    def to_json(self) -> str:
        return json.dumps({"lo": self.lo, "hi": self.hi, "level_cap": self.level_cap}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FeatureScales":
        d = json.loads(text)
        return cls({k: float(v) for k, v in d["lo"].items()},
                   {k: float(v) for k, v in d["hi"].items()}, int(d.get("level_cap", LEVEL_CAP)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "FeatureScales":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class GraphTensors:
    """Matrices the GAN consumes for one graph."""

    a_norm: np.ndarray
    x_num: np.ndarray
    x_cat_level: np.ndarray
    x_cat_phase: np.ndarray
    head_index: int = 0

    @property
    def m(self) -> int:
        return self.a_norm.shape[0]

    def permuted(self, perm) -> "GraphTensors":
        """Relabel nodes so new node ``k`` is old node ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        return GraphTensors(self.a_norm[np.ix_(perm, perm)], self.x_num[perm],
                            self.x_cat_level[perm], self.x_cat_phase[perm], int(inv[self.head_index]))


def one_hot(indices, width: int) -> np.ndarray:
    out = np.zeros((len(indices), width))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def encode_attributes(g: FeederGraph, scale: FeatureScales) -> GraphTensors:
    """Encode a featurized graph as normalized adjacency plus attribute matrices."""
    cols = []
    for f in NUMERIC_FEATURES:
        vals = np.array([getattr(n, f) for n in g.nodes], dtype=float)
        lo, hi = scale.lo[f], scale.hi[f]
        tol = 1e-9 * max(1.0, abs(hi - lo))
        bad = (vals < lo - tol) | (vals > hi + tol)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValueError(f"feature {f!r} of node {i} = {vals[i]} is outside its scale [{lo}, {hi}]")
        cols.append(np.clip(scale.to_unit(f, vals), -1.0, 1.0))
    levels = [n.level for n in g.nodes]
    if max(levels) > scale.level_cap:
        raise ValueError(f"feature 'level' = {max(levels)} exceeds level_cap {scale.level_cap}")
    return GraphTensors(
        a_norm=normalize_adjacency(adjacency_matrix(g)),
        x_num=np.stack(cols, axis=1),
        x_cat_level=one_hot(levels, scale.d_level),
        x_cat_phase=one_hot([n.phase.index for n in g.nodes], N_PHASES),
        head_index=g.head,
    )


def decode_numeric(x_num: np.ndarray, scale: FeatureScales) -> dict[str, np.ndarray]:
    """Inverse of the numeric part of :func:`encode_attributes`."""
    x_num = np.asarray(x_num, dtype=float)
    return {f: scale.from_unit(f, x_num[:, k]) for k, f in enumerate(NUMERIC_FEATURES)}
