"""Synthetic radial feeders with realistic-looking statistics, and the bundled corpus.

Trees are drawn from a fixed out-degree law (about 30% leaves, 35% pass-through,
22% two-way splits, a few wider ones). A three-phase trunk follows the heaviest
branches from the head; laterals leaving it are single phase (occasionally two
phase), balanced across a/b/c. Conductors step down at every light branch.
"""
from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .graph import DeviceNode, FeederGraph, Phase
from .ingest import compute_topological_features, load_feeder, parse_feeder_file, device_as_node

OUT_DEGREE_LAW = {0: 0.30, 1: 0.35, 2: 0.22, 3: 0.06, 4: 0.02, 5: 0.005}
CONDUCTORS = (100.0, 150.0, 200.0, 230.0, 300.0, 340.0, 400.0, 530.0, 600.0, 700.0)
SINGLE_KVA = (10.0, 15.0, 25.0, 37.5, 50.0)
THREE_KVA = (75.0, 150.0, 300.0)

CORPUS_SEED = 20201116
CORPUS_SIZE = 50


def _degree_sequence(n: int, rng) -> list[int]:
    degs = np.array(list(OUT_DEGREE_LAW))
    probs = np.array(list(OUT_DEGREE_LAW.values()))
    probs = probs / probs.sum()
    while True:
        d = rng.choice(degs, size=n, p=probs)
        if d.sum() == n - 1:
            break
    # Cycle lemma: exactly one rotation keeps the Lukasiewicz walk positive.
    walk = np.cumsum(d - 1)
    shift = (int(np.argmin(walk)) + 1) % n
    return [int(x) for x in np.roll(d, -shift)]


def random_tree(n: int, rng) -> dict[int, list[int]]:
    """Children lists of a tree on ``0..n-1`` in BFS order with root 0."""
    degs = _degree_sequence(n, rng)
    children = {v: [] for v in range(n)}
    nxt = 1
    for v in range(n):
        children[v] = list(range(nxt, nxt + degs[v]))
        nxt += degs[v]
    return children


def random_feeder(n: int, rng, trunk_fraction: float = 0.22, two_phase_prob: float = 0.06,
                  heavy_step_prob: float = 0.6) -> FeederGraph:
    rng = np.random.default_rng(rng)
    children = random_tree(n, rng)
    size = [1] * n
    for v in reversed(range(n)):
        size[v] += sum(size[c] for c in children[v])

    # three-phase trunk: grow from the head along the heaviest open branch
    trunk = {0}
    frontier = list(children[0])
    target = max(2, round(trunk_fraction * n))
    while len(trunk) < target and frontier:
        frontier.sort(key=lambda c: (-size[c], c))
        v = frontier.pop(0)
        trunk.add(v)
        frontier += children[v]

    phase: dict[int, Phase] = {v: Phase.ABC for v in trunk}
    amps = {0: float(rng.choice(CONDUCTORS[7:]))}
    load = {"a": 0, "b": 0, "c": 0}
    laterals = sorted((c for v in trunk for c in children[v] if c not in trunk), key=lambda c: (-size[c], c))
    for c in laterals:
        if rng.random() < two_phase_prob:
            phase[c] = Phase(str(rng.choice(["ab", "ac", "bc"])))
        else:
            best = min(load, key=lambda k: (load[k], rng.random()))
            phase[c] = Phase(best)
        for k in phase[c].value:
            load[k] += size[c] / len(phase[c].value)

    for v in range(n):
        kids = sorted(children[v], key=lambda c: (-size[c], c))
        for rank, c in enumerate(kids):
            if c not in phase:
                p = phase[v]
                if p.count == 2 and rank > 0 and rng.random() < 0.5:
                    p = Phase(rng.choice(list(p.value)))
                phase[c] = p
            k = CONDUCTORS.index(amps[v])
            if len(kids) < 2 or (rank == 0 and rng.random() >= heavy_step_prob):
                amps[c] = amps[v]
            else:
                amps[c] = CONDUCTORS[max(0, k - (1 if rank == 0 else int(rng.integers(1, 3))))]

    lengths = np.clip(rng.lognormal(np.log(120.0), 0.8, size=n), 5.0, 780.0).round(1)
    nodes = []
    for v in range(n):
        kva = 0.0
        if not children[v] or rng.random() < 0.25:
            kva = float(rng.choice(THREE_KVA if phase[v] is Phase.ABC else SINGLE_KVA))
        nodes.append(DeviceNode(v, float(lengths[v]), amps[v], phase[v], xfmr_kva=kva, name=f"L{v}"))
    edges = frozenset((v, c) for v in range(n) for c in children[v])
    return compute_topological_features(FeederGraph(tuple(nodes), edges, 0))


def synthetic_corpus(count: int = CORPUS_SIZE, seed: int = CORPUS_SEED, n_range=(20, 60)) -> list[FeederGraph]:
    rng = np.random.default_rng(seed)
    return [random_feeder(int(rng.integers(n_range[0], n_range[1] + 1)), rng) for _ in range(count)]


def corpus_dir() -> Path:
    return Path(str(resources.files("synthfeeder") / "data" / "corpus"))


def corpus_files() -> list[Path]:
    return sorted(corpus_dir().glob("*.feeder"))


def load_corpus() -> list[FeederGraph]:
    """The bundled 50-feeder desk-scale corpus."""
    return [load_feeder(p) for p in corpus_files()]


def corpus_stats_path() -> Path:
    return corpus_dir().parent / "corpus_stats.txt"


def write_corpus(directory, count: int = CORPUS_SIZE, seed: int = CORPUS_SEED) -> list[Path]:
    from .layout import export_feeder_model

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, g in enumerate(synthetic_corpus(count, seed)):
        p = directory / f"feeder_{k:03d}.feeder"
        text = f"# synthetic radial feeder {k}, seed {seed}\n" + export_feeder_model(g)
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
