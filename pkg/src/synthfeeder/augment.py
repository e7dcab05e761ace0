"""Training-set augmentation by sampling radial sub-feeders."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import LEVEL_CAP, FeederGraph, downstream
from .ingest import (FeatureScales, GraphTensors, compute_topological_features,
                     encode_attributes, load_feeder)

log = logging.getLogger(__name__)

MIN_NODES = 100
MAX_FRACTION = 0.5


class SamplingError(RuntimeError):
    pass


def induced_subgraph(g: FeederGraph, start: int, level_cap: int = LEVEL_CAP) -> FeederGraph:
    """``start`` and everything below it, relabelled in BFS order with
    ``start`` as node 0, topological features recomputed from the new head."""
    keep = [start] + downstream(g, start)
    new_id = {old: k for k, old in enumerate(keep)}
    nodes = []
    for k, old in enumerate(keep):
        n = g.nodes[old]
        nodes.append(type(n)(k, n.length, n.norm_amps, n.phase, xfmr_kva=n.xfmr_kva, name=n.name))
    edges = frozenset((new_id[p], new_id[c]) for p, c in g.edges if p in new_id and c in new_id)
    return compute_topological_features(FeederGraph(tuple(nodes), edges, 0), level_cap)


def start_candidates(g: FeederGraph) -> list[int]:
    return [n.id for n in g.nodes if n.level <= 1]


def _acceptable(size: int, total: int, min_nodes: int, max_fraction: float) -> bool:
    return min_nodes <= size <= max_fraction * total


def sample_subgraph(g: FeederGraph, rng, min_nodes: int = MIN_NODES,
                    max_fraction: float = MAX_FRACTION) -> FeederGraph | None:
    """Draw one sub-feeder rooted at a uniformly chosen level-0/1 node.

    Returns ``None`` (resample) when the subgraph has fewer than
    ``min_nodes`` nodes or more than ``max_fraction`` of the original.
    ``rng`` is a ``numpy.random.Generator`` or an integer seed.
    """
    rng = np.random.default_rng(rng)
    cands = start_candidates(g)
    if not cands:
        return None
    start = cands[int(rng.integers(len(cands)))]
    size = 1 + len(downstream(g, start))
    if not _acceptable(size, g.m, min_nodes, max_fraction):
        return None
    return induced_subgraph(g, start)


@dataclass
class Dataset:
    graphs: list[FeederGraph]
    tensors: list[GraphTensors]
    provenance: list[tuple[int, int | str]]
    scales: FeatureScales

    def __len__(self) -> int:
        return len(self.graphs)

    def save(self, directory: str | Path) -> None:
        """Write one feeder file per member plus ``index.tsv`` and ``scales.json``."""
        from .layout import export_feeder_model

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rows = ["file\tsource_feeder\tstart_node\tnodes"]
        for k, (g, (src, start)) in enumerate(zip(self.graphs, self.provenance)):
            fname = f"graph_{k:04d}.feeder"
            (directory / fname).write_text(export_feeder_model(g), encoding="utf-8")
            rows.append(f"{fname}\t{src}\t{start}\t{g.m}")
        (directory / "index.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        self.scales.save(directory / "scales.json")

    @classmethod
    def load(cls, directory: str | Path) -> "Dataset":
        directory = Path(directory)
        lines = (directory / "index.tsv").read_text(encoding="utf-8").splitlines()[1:]
        scales = FeatureScales.load(directory / "scales.json")
        graphs, prov = [], []
        for line in lines:
            if not line.strip():
                continue
            fname, src, start, _ = line.split("\t")
            graphs.append(load_feeder(directory / fname, scales.level_cap))
            prov.append((int(src), start if start == "full" else int(start)))
        return cls(graphs, [encode_attributes(g, scales) for g in graphs], prov, scales)


def build_dataset(feeders: list[FeederGraph], target_count: int, seed,
                  min_nodes: int = MIN_NODES, max_fraction: float = MAX_FRACTION,
                  scales: FeatureScales | None = None) -> Dataset:
    """Every full feeder once, topped up with sampled sub-feeders to ``target_count``."""
    feeders = list(feeders)
    if not feeders:
        raise SamplingError("no feeders given")
    if target_count < len(feeders):
        raise ValueError(f"target_count {target_count} is below the number of feeders {len(feeders)}")
    graphs = list(feeders)
    prov: list[tuple[int, int | str]] = [(i, "full") for i in range(len(feeders))]

    need = target_count - len(feeders)
    if need:
        feasible = {}
        for i, g in enumerate(feeders):
            ok = [s for s in start_candidates(g)
                  if _acceptable(1 + len(downstream(g, s)), g.m, min_nodes, max_fraction)]
            feasible[i] = len(ok)
        if not any(feasible.values()):
            diag = ", ".join(f"feeder {i}: {feeders[i].m} nodes, "
                             f"{len(start_candidates(feeders[i]))} level-0/1 starts"
                             for i in range(len(feeders)))
            raise SamplingError(f"no level-0/1 start yields between {min_nodes} nodes and "
                                f"{max_fraction:.0%} of its feeder ({diag})")

    rng = np.random.default_rng(seed)
    misses = 0
    limit = 100 * target_count
    while len(graphs) < target_count:
        i = int(rng.integers(len(feeders)))
        g = feeders[i]
        cands = start_candidates(g)
        start = cands[int(rng.integers(len(cands)))]
        size = 1 + len(downstream(g, start))
        if not _acceptable(size, g.m, min_nodes, max_fraction):
            misses += 1
            if misses >= limit:
                raise SamplingError(f"gave up after {misses} consecutive rejected samples")
            continue
        misses = 0
        graphs.append(induced_subgraph(g, start))
        prov.append((i, start))

    if scales is None:
        scales = FeatureScales.from_graphs(graphs)
    tensors = [encode_attributes(g, scales) for g in graphs]
    log.info("dataset: %d graphs (%d full, %d sampled)", len(graphs), len(feeders), len(graphs) - len(feeders))
    return Dataset(graphs, tensors, prov, scales)
