"""Feasibility metrics, the random-matrix baseline and empirical-statistics screening."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import LEVEL_CAP, PHASES, FeederGraph, Phase

# Success compares phase counts, Perfect requires a letter subset.


def check_connected(a_tilde, head: int) -> bool:
    """True iff every node is reachable from ``head`` once its column is cleared."""
    from .reconstruct import _bfs

    b = np.array(a_tilde, copy=True)
    b[:, head] = 0
    return len(_bfs(b, head)) == b.shape[0]


def check_success(g: FeederGraph) -> bool:
    n = g.nodes
    return all(n[c].phase.count <= n[p].phase.count for p, c in g.edges)


def check_perfect(g: FeederGraph) -> bool:
    n = g.nodes
    return all(n[c].phase.letters <= n[p].phase.letters for p, c in g.edges)


@dataclass
class Rates:
    connected: float
    success: float
    perfect: float

    def as_tuple(self):
        return (self.connected, self.success, self.perfect)

    @staticmethod
    def mean(items) -> "Rates":
        items = list(items)
        if not items:
            return Rates(0.0, 0.0, 0.0)
        return Rates(*(float(np.mean(col)) for col in zip(*(r.as_tuple() for r in items))))


def compute_rates(a_tilde, candidates) -> Rates:
    """Fraction of the ``m`` head choices that are connected / success / perfect."""
    from .reconstruct import head_candidates

    a_tilde = np.asarray(a_tilde)
    m = a_tilde.shape[0]
    if m == 0:
        raise ValueError("empty adjacency matrix")
    connected = sum(check_connected(a_tilde, h) for h in head_candidates(a_tilde))
    graphs = [c.graph if hasattr(c, "graph") else c for c in candidates]
    graphs = [g for g in graphs if check_connected(a_tilde, g.head)]
    success = sum(check_success(g) for g in graphs)
    perfect = sum(check_perfect(g) for g in graphs)
    return Rates(connected / m, success / m, perfect / m)


@dataclass
class ValidationReport:
    """Per-candidate flags plus rates for one generated soft graph."""

    heads: list[int]
    connected: list[bool]
    success: list[bool]
    perfect: list[bool]
    rates: Rates
    guided_rates: Rates | None = None
    screen: list = field(default_factory=list)

    def __post_init__(self):
        for c, s, p in zip(self.connected, self.success, self.perfect):
            if (p and not s) or (s and not c):
                raise ValueError("perfect must imply success and success must imply connected")


# --- empirical statistics -------------------------------------------------------

DEGREE_KEYS = ("0", "1", "2", "3", "4", "5+")


def degree_key(d: int) -> str:
    return "5+" if d >= 5 else str(d)


def reference_phase_ranges() -> dict[Phase, tuple[float, float]]:
    out = {}
    for p in PHASES:
        if p.count == 1:
            out[p] = (0.18, 0.28)
        elif p.count == 2:
            out[p] = (0.01, 0.03)
        else:
            out[p] = (0.20, 0.25)
    return out


@dataclass
class EmpiricalStats:
    level_range: tuple[int, int] = (4, 7)
    max_level: int = LEVEL_CAP
    phase_fractions: dict = field(default_factory=reference_phase_ranges)
    outdegree_fractions: dict = field(default_factory=lambda: {
        "0": (0.20, 0.40), "1": (0.25, 0.45), "2": (0.18, 0.26),
        "3": (0.05, 0.07), "4": (0.01, 0.03), "5+": (0.0, 0.01)})
    length_edges: np.ndarray | None = None
    length_probs: np.ndarray | None = None
    length_tv_threshold: float = 0.3
    check_level_range: bool = False

    def __post_init__(self):
        if (self.length_edges is None) != (self.length_probs is None):
            raise ValueError("length histogram needs both edges and probabilities")
        if self.length_edges is not None:
            self.length_edges = np.asarray(self.length_edges, dtype=float)
            self.length_probs = np.asarray(self.length_probs, dtype=float)
        if self.length_edges is not None and len(self.length_edges) != len(self.length_probs) + 1:
            raise ValueError("histogram needs one more edge than bins")
        for lo, hi in list(self.phase_fractions.values()) + list(self.outdegree_fractions.values()):
            if not 0.0 <= lo <= hi <= 1.0:
                raise ValueError(f"fraction range ({lo}, {hi}) must lie within [0, 1]")

    def to_text(self) -> str:
        lines = ["# empirical feeder statistics",
                 f"level_min={self.level_range[0]}", f"level_max={self.level_range[1]}",
                 f"max_level={self.max_level}", f"check_level_range={int(self.check_level_range)}",
                 f"length_tv_threshold={float(self.length_tv_threshold)!r}"]
        lines += [f"phase.{p.value}={float(lo)!r},{float(hi)!r}" for p, (lo, hi) in self.phase_fractions.items()]
        lines += [f"outdegree.{k}={float(lo)!r},{float(hi)!r}" for k, (lo, hi) in self.outdegree_fractions.items()]
        if self.length_edges is not None:
            lines.append("[length_histogram]")
            lines += [f"{float(lo)!r},{float(hi)!r},{float(p)!r}" for lo, hi, p in
                      zip(self.length_edges[:-1], self.length_edges[1:], self.length_probs)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EmpiricalStats":
        kv, hist, in_hist = {}, [], False
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if line == "[length_histogram]":
                in_hist = True
                continue
            if in_hist:
                hist.append(tuple(float(x) for x in line.split(",")))
            else:
                if "=" not in line:
                    raise ValueError(f"stats line {lineno}: expected key=value")
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        pair = lambda s: tuple(float(x) for x in s.split(","))
        phases = {Phase(k[6:]): pair(v) for k, v in kv.items() if k.startswith("phase.")}
        degrees = {k[10:]: pair(v) for k, v in kv.items() if k.startswith("outdegree.")}
        edges = np.array([h[0] for h in hist] + [hist[-1][1]]) if hist else None
        probs = np.array([h[2] for h in hist]) if hist else None
        return cls(level_range=(int(kv.get("level_min", 4)), int(kv.get("level_max", 7))),
                   max_level=int(kv.get("max_level", LEVEL_CAP)),
                   phase_fractions=phases or reference_phase_ranges(),
                   outdegree_fractions=degrees or cls().outdegree_fractions,
                   length_edges=edges, length_probs=probs,
                   length_tv_threshold=float(kv.get("length_tv_threshold", 0.3)),
                   check_level_range=kv.get("check_level_range", "0") in ("1", "true"))

    def save(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EmpiricalStats":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


def phase_fractions(g: FeederGraph) -> dict[Phase, float]:
    counts = Counter(n.phase for n in g.nodes)
    return {p: counts[p] / g.m for p in PHASES}


def outdegree_fractions(g: FeederGraph) -> dict[str, float]:
    counts = Counter(degree_key(g.out_degree(v)) for v in range(g.m))
    return {k: counts[k] / g.m for k in DEGREE_KEYS}


def length_histogram(lengths, edges) -> np.ndarray:
    edges = np.asarray(edges, dtype=float)
    lengths = np.clip(np.asarray(lengths, dtype=float), edges[0], edges[-1])
    counts, _ = np.histogram(lengths, bins=edges)
    return counts / max(counts.sum(), 1)


def total_variation(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class ScreenResult:
    passed: bool
    reasons: list[str]


def empirical_screen(g: FeederGraph, stats: EmpiricalStats | None = None) -> ScreenResult:
    """Compare one feeder against empirical ranges; list every failed check."""
    stats = stats or EmpiricalStats()
    reasons = []
    top = max(n.level for n in g.nodes)
    if top > stats.max_level:
        reasons.append(f"level: {top} levels exceeds the maximum of {stats.max_level}")
    if stats.check_level_range and not stats.level_range[0] <= top <= stats.level_range[1]:
        reasons.append(f"level: max level {top} outside {stats.level_range}")
    for p, frac in phase_fractions(g).items():
        lo, hi = stats.phase_fractions.get(p, (0.0, 1.0))
        if not lo <= frac <= hi:
            reasons.append(f"phase {p.value}: fraction {frac:.3f} outside [{lo:.3f}, {hi:.3f}]")
    for k, frac in outdegree_fractions(g).items():
        lo, hi = stats.outdegree_fractions.get(k, (0.0, 1.0))
        if not lo <= frac <= hi:
            reasons.append(f"out-degree {k}: fraction {frac:.3f} outside [{lo:.3f}, {hi:.3f}]")
    if stats.length_edges is None:
        return ScreenResult(not reasons, reasons)
    hist = length_histogram([n.length for n in g.nodes], stats.length_edges)
    tv = total_variation(hist, stats.length_probs)
    if tv > stats.length_tv_threshold:
        reasons.append(f"length: histogram total variation {tv:.3f} exceeds {stats.length_tv_threshold:.3f}")
    return ScreenResult(not reasons, reasons)


def stats_from_corpus(graphs, bins: int = 8, length_max: float = 800.0,
                      tv_threshold: float = 0.3) -> EmpiricalStats:
    """Envelope statistics of a corpus: per-feeder min/max of every fraction.

    The length reference is the pooled histogram; the TV threshold is raised
    to the worst corpus member if needed, so every member passes its own screen.
    """
    graphs = list(graphs)
    if not graphs:
        raise ValueError("empty corpus")
    pf = [phase_fractions(g) for g in graphs]
    of = [outdegree_fractions(g) for g in graphs]
    top = [max(n.level for n in g.nodes) for g in graphs]
    edges = np.linspace(0.0, max(length_max, max(n.length for g in graphs for n in g.nodes)), bins + 1)
    probs = length_histogram([n.length for g in graphs for n in g.nodes], edges)
    worst = max(total_variation(length_histogram([n.length for n in g.nodes], edges), probs) for g in graphs)
    return EmpiricalStats(
        level_range=(min(top), max(top)),
        max_level=LEVEL_CAP,
        phase_fractions={p: (min(f[p] for f in pf), max(f[p] for f in pf)) for p in PHASES},
        outdegree_fractions={k: (min(f[k] for f in of), max(f[k] for f in of)) for k in DEGREE_KEYS},
        length_edges=edges, length_probs=probs,
        length_tv_threshold=max(tv_threshold, worst),
    )


def regenerate_lengths(g: FeederGraph, reference, rng) -> FeederGraph:
    """Resample every device length from a reference histogram.

    ``reference`` is ``(edges, probabilities)`` or an :class:`EmpiricalStats`.
    A bin is drawn by inverse CDF, then a length uniformly inside it.
    """
    if isinstance(reference, EmpiricalStats):
        if reference.length_edges is None:
            raise ValueError("statistics carry no length histogram")
        edges, probs = reference.length_edges, reference.length_probs
    else:
        edges, probs = reference
    edges = np.asarray(edges, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if probs.sum() <= 0:
        raise ValueError("reference histogram is empty")
    rng = np.random.default_rng(rng)
    cdf = np.cumsum(probs / probs.sum())
    u = rng.random(g.m)
    k = np.minimum(np.searchsorted(cdf, u, side="right"), len(probs) - 1)
    lengths = edges[k] + rng.random(g.m) * (edges[k + 1] - edges[k])
    return g.update_nodes(length=[float(x) for x in lengths])


# --- random-matrix baseline -----------------------------------------------------------

def trial_seeds(seed, trials: int):
    return np.random.SeedSequence(seed).spawn(trials)


def random_soft_graph(m: int, rng, d_level: int = LEVEL_CAP + 1):
    from .reconstruct import SoftGraph

    a = rng.random((m, m))
    x_num = rng.uniform(-1.0, 1.0, size=(m, 4))
    lvl = rng.random((m, d_level))
    ph = rng.random((m, len(PHASES)))
    return SoftGraph(a, x_num, lvl / lvl.sum(axis=1, keepdims=True), ph / ph.sum(axis=1, keepdims=True))


def random_baseline(m: int, trials: int, seed, scales=None, normamps_table=None, guided: bool = False) -> Rates:
    """Average rates of uniformly random soft graphs pushed through reconstruction."""
    from .pipeline import evaluate_soft

    if trials < 1:
        raise ValueError("trials must be >= 1")
    results = []
    for ss in trial_seeds(seed, trials):
        soft = random_soft_graph(m, np.random.default_rng(ss))
        ev = evaluate_soft(soft, scales=scales, normamps_table=normamps_table)
        results.append(ev.report.guided_rates if guided else ev.report.rates)
    return Rates.mean(results)
