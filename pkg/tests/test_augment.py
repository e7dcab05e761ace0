import numpy as np
import pytest

from synthfeeder.augment import (Dataset, SamplingError, build_dataset, induced_subgraph,
                                 sample_subgraph, start_candidates)
from synthfeeder.graph import chain, downstream, from_parent_map, validate_radial
from synthfeeder.ingest import compute_topological_features
from synthfeeder.corpus import random_feeder


def _branches(sizes):
    """Head 0 with one straight branch per entry of ``sizes``."""
    parents, nxt = {}, 1
    for s in sizes:
        prev = 0
        for _ in range(s):
            parents[nxt] = prev
            prev = nxt
            nxt += 1
    return compute_topological_features(from_parent_map(parents, nxt, 0))


def test_small_feeder_always_resamples():
    g = compute_topological_features(chain([1.0] * 10))
    assert all(sample_subgraph(g, s) is None for s in range(50))


def test_full_graph_start_is_rejected():
    g = _branches([150, 149])
    sub = induced_subgraph(g, g.head)
    assert sub.m == g.m  # whole feeder: 100% > 50% of the original
    assert not (sub.m <= 0.5 * g.m)


def test_branch_start_gives_downstream_set():
    g = _branches([120, 179])
    assert g.m == 300
    branch_root = 1
    assert len(downstream(g, branch_root)) == 119
    sub = induced_subgraph(g, branch_root)
    assert sub.m == 120 and sub.head == 0
    assert validate_radial(sub) == []
    assert sub.nodes[0].distance == g.nodes[branch_root].length


def test_accepted_samples_respect_bounds():
    g = _branches([133, 133, 133])
    accepted = [s for s in (sample_subgraph(g, k, 100, 0.5) for k in range(200)) if s is not None]
    assert accepted
    for s in accepted:
        assert 100 <= s.m <= 200
        assert validate_radial(s) == []


def test_start_candidates_are_level_zero_or_one():
    g = random_feeder(60, np.random.default_rng(3))
    for v in start_candidates(g):
        assert g.nodes[v].level <= 1


def test_one_feeder_target_one():
    g = compute_topological_features(chain([1.0] * 5))
    ds = build_dataset([g], 1, seed=0)
    assert len(ds) == 1 and ds.provenance == [(0, "full")]


def test_four_hundred_node_feeder_target_five():
    g = _branches([133, 133, 133])
    ds = build_dataset([g], 5, seed=11)
    assert ds.provenance[0] == (0, "full")
    assert len(ds) == 5
    for sub in ds.graphs[1:]:
        assert 100 <= sub.m <= 200
        assert validate_radial(sub) == []


def test_same_seed_same_dataset(tmp_path):
    feeders = [random_feeder(60, np.random.default_rng(k)) for k in range(3)]
    a = build_dataset(feeders, 12, seed=5, min_nodes=10)
    b = build_dataset(feeders, 12, seed=5, min_nodes=10)
    a.save(tmp_path / "a")
    b.save(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_unsatisfiable_thresholds_raise_with_diagnostics():
    g = compute_topological_features(chain([1.0] * 10))
    with pytest.raises(SamplingError, match="feeder 0"):
        build_dataset([g], 3, seed=0)


def test_target_below_feeder_count_rejected():
    g = compute_topological_features(chain([1.0] * 3))
    with pytest.raises(ValueError):
        build_dataset([g, g], 1, seed=0)


def test_dataset_save_load(tmp_path):
    feeders = [random_feeder(40, np.random.default_rng(k)) for k in range(2)]
    ds = build_dataset(feeders, 6, seed=2, min_nodes=5)
    ds.save(tmp_path)
    back = Dataset.load(tmp_path)
    assert back.provenance == ds.provenance
    assert [g.edges for g in back.graphs] == [g.edges for g in ds.graphs]
    for t, u in zip(back.tensors, ds.tensors):
        assert np.allclose(t.x_num, u.x_num, atol=1e-12)
