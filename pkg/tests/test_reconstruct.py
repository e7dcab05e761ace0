import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_radial
from oracles import connected_heads, reconstruct_loops
from synthfeeder.graph import Phase, chain, from_parent_map, validate_radial
from synthfeeder.ingest import FeatureScales, device_as_node
from synthfeeder.reconstruct import (NORMAMPS_TABLE, SOURCE_BUS, admissible_children,
                                     assign_phases_guided, canonical, head_candidates, node_to_edge,
                                     permute_feeder_head, reconstruct_adjacency,
                                     reconstruct_attributes, snap)
from synthfeeder.validate import check_perfect


def _scales():
    return FeatureScales({"length": 0.0, "norm_amps": 100.0, "distance": 0.0, "pseudo_load": 0.0},
                         {"length": 800.0, "norm_amps": 700.0, "distance": 8000.0, "pseudo_load": 500.0})


def test_two_node_example_keeps_larger_entry():
    out = reconstruct_adjacency([[0, 0.9], [0.4, 0]])
    assert out[:, 1].tolist() == [1.0, 0.0]  # 0.9 > 0.4 keeps (0, 1)
    # column 0 has no surviving entry; it receives its 1 on the diagonal
    assert out[:, 0].tolist() == [1.0, 0.0]


def test_diagonal_dominant_input_still_one_per_column():
    a = np.full((5, 5), 0.01) + np.eye(5) * 0.9
    out = reconstruct_adjacency(a)
    assert (out.sum(axis=0) == 1).all()


def test_appendix_shape_from_soft_matrix():
    # 0 -> 1, 1 -> {2, 3, 4}, with a 2 -> 0 link closing column 0
    a = np.zeros((5, 5))
    for i, j in [(0, 1), (1, 2), (1, 3), (1, 4), (2, 0)]:
        a[i, j] = 0.9
    out = reconstruct_adjacency(a)
    assert {tuple(map(int, e)) for e in zip(*np.nonzero(out))} == {(0, 1), (1, 2), (1, 3), (1, 4), (2, 0)}
    assert head_candidates(out) == [0, 1, 2]
    cands = {c.head: c.graph for c in permute_feeder_head(out)}
    assert cands[0].edges == {(0, 1), (1, 2), (1, 3), (1, 4)}
    assert set(cands) == {0, 1, 2}


def test_input_validation():
    with pytest.raises(ValueError):
        reconstruct_adjacency(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        reconstruct_adjacency([[0, 1.5], [0, 0]])


def test_matches_loop_transcription_exhaustively_small():
    # every 0/0.5/1 pattern on 2x2 and 3x3, then random 4..6
    for m in (2, 3):
        for vals in itertools.product([0.0, 0.5, 1.0], repeat=m * m):
            a = np.array(vals).reshape(m, m)
            assert np.array_equal(reconstruct_adjacency(a), reconstruct_loops(a))
    rng = np.random.default_rng(0)
    for _ in range(300):
        m = int(rng.integers(4, 7))
        a = rng.random((m, m))
        if rng.random() < 0.3:
            a = np.round(a, 1)  # plenty of ties
        assert np.array_equal(reconstruct_adjacency(a), reconstruct_loops(a))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_reconstruction_properties(m, seed):
    out = reconstruct_adjacency(np.random.default_rng(seed).random((m, m)))
    assert ((out == 0) | (out == 1)).all()
    assert (out.sum(axis=0) == 1).all()
    off = out - np.diag(np.diag(out))
    assert not (off * off.T).any()


def test_chain_head_gives_chain():
    a = np.zeros((3, 3))
    a[0, 1] = a[1, 2] = a[0, 0] = 1
    cands = permute_feeder_head(a)
    assert [c.head for c in cands] == [0]
    assert cands[0].graph.edges == {(0, 1), (1, 2)}


def test_two_disjoint_cycles_give_no_candidates():
    a = np.zeros((6, 6))
    for i, j in [(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]:
        a[i, j] = 1
    assert permute_feeder_head(a) == []
    assert connected_heads(a) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 15), st.integers(0, 2**32 - 1))
def test_candidates_are_radial_and_match_oracle(m, seed):
    out = reconstruct_adjacency(np.random.default_rng(seed).random((m, m)))
    cands = permute_feeder_head(out)
    assert [c.head for c in cands] == connected_heads(out)
    for c in cands:
        assert validate_radial(c.graph) == []


def test_node_to_edge_examples():
    raw = node_to_edge(chain([5.0]))
    assert [(d.bus_from, d.bus_to) for d in raw.devices] == [(SOURCE_BUS, "b_L0")]
    raw = node_to_edge(chain([5.0, 6.0]))
    assert [(d.bus_from, d.bus_to) for d in raw.devices] == [(SOURCE_BUS, "b_L0"), ("b_L0", "b_L1")]
    g = from_parent_map({1: 0, 2: 0}, 3, 0)
    bad = type(g)(g.nodes, g.edges | {(1, 2)}, 0)
    with pytest.raises(ValueError):
        node_to_edge(bad)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2**32 - 1))
def test_node_to_edge_inverts_device_as_node(m, seed):
    import networkx as nx
    from oracles import to_networkx

    g = random_radial(m, np.random.default_rng(seed))
    back = device_as_node(node_to_edge(g))
    assert nx.is_isomorphic(to_networkx(g), to_networkx(back))
    by_name = {n.name: n for n in g.nodes}
    for n in back.nodes:
        assert n.length == by_name[n.name].length and n.phase == by_name[n.name].phase


def test_canonical_puts_head_first():
    g = random_radial(12, np.random.default_rng(4))
    c = canonical(g)
    assert c.head == 0 and c.bfs_order() == list(range(12))
    assert sorted(n.name for n in c.nodes) == sorted(n.name for n in g.nodes)


def test_attribute_decoding_examples():
    x = np.array([[-1.0, 0, 0, 0], [1.0, 0, 0, 0], [0.0, 0, 0, 0]])
    ph = np.eye(7)[[6, 3, 0]]
    lvl = np.eye(11)[[0, 2, 1]]
    attrs = reconstruct_attributes(x, lvl, ph, _scales())
    assert attrs.length.tolist() == [0.0, 800.0, 400.0]
    assert attrs.phase == [Phase.ABC, Phase.AB, Phase.A]
    assert attrs.level.tolist() == [0, 2, 1]
    assert snap([228.0, 232.0, 10.0, 1e6], NORMAMPS_TABLE).tolist() == [230.0, 230.0, 100.0, 700.0]
    with pytest.raises(ValueError):
        reconstruct_attributes(x, lvl, ph, _scales(), normamps_table=())


def test_snap_matches_brute_force():
    rng = np.random.default_rng(5)
    vals = rng.uniform(0, 900, 500)
    want = [min(NORMAMPS_TABLE, key=lambda t: (abs(t - v), t)) for v in vals]
    assert snap(vals, NORMAMPS_TABLE).tolist() == want


def test_admissible_children():
    assert set(admissible_children(Phase.AB)) == {Phase.AB, Phase.A, Phase.B}
    assert len(admissible_children(Phase.ABC)) == 7
    assert admissible_children(Phase.C) == [Phase.C]


def test_guided_phases_chain_and_bifurcation():
    g = assign_phases_guided(chain([1.0] * 5, phase=Phase.A), np.random.default_rng(0).random((5, 7)))
    assert all(n.phase is Phase.ABC for n in g.nodes)
    star = from_parent_map({1: 0, 2: 0, 3: 1, 4: 1}, 5, 0)
    scores = np.zeros((5, 7))
    scores[1, Phase.AB.index] = 1
    scores[2, Phase.C.index] = 1
    scores[3, Phase.C.index] = 1  # inadmissible under ab; next best admissible wins
    scores[3, Phase.B.index] = 0.5
    scores[4, Phase.A.index] = 1
    out = assign_phases_guided(star, scores)
    assert [n.phase for n in out.nodes] == [Phase.ABC, Phase.AB, Phase.C, Phase.B, Phase.A]


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_guided_phases_always_perfect(m, seed):
    rng = np.random.default_rng(seed)
    g = random_radial(m, rng)
    assert check_perfect(assign_phases_guided(g, rng.random((m, 7))))
