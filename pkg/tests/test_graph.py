import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_radial
from oracles import to_networkx
from synthfeeder.graph import (PHASES, DeviceNode, FeederGraph, Phase, chain, downstream,
                               from_parent_map, out_degree_histogram, validate_radial)


def test_seven_phases_with_one_hot_width_seven():
    assert len(PHASES) == 7
    assert [p.value for p in PHASES] == ["a", "b", "c", "ab", "ac", "bc", "abc"]
    assert [p.index for p in PHASES] == list(range(7))
    assert Phase.AB.letters == {"a", "b"} and Phase.ABC.count == 3


@pytest.mark.parametrize("field,value", [("length", -1.0), ("norm_amps", 0.0), ("distance", -0.5),
                                         ("pseudo_load", -2.0), ("level", -1)])
def test_device_node_rejects_bad_values(field, value):
    kwargs = dict(id=0, length=1.0, norm_amps=100.0, phase="a")
    kwargs[field] = value
    with pytest.raises(ValueError):
        DeviceNode(**kwargs)


def test_graph_requires_dense_ids():
    n = DeviceNode(1, 1.0, 100.0, Phase.A)
    with pytest.raises(ValueError, match="dense"):
        FeederGraph((n,), frozenset(), 0)


def test_single_node_is_radial():
    assert validate_radial(chain([10.0])) == []


def test_chain_with_back_edge_has_one_cycle():
    g = chain([1, 1, 1])
    looped = FeederGraph(g.nodes, g.edges | {(2, 0)}, 0)
    cycles = [v for v in validate_radial(looped) if v.rule == "cycle"]
    assert len(cycles) == 1
    assert set(cycles[0].nodes) == {0, 1, 2}


def test_two_disjoint_chains_report_disconnection():
    g = from_parent_map({1: 0, 3: 2}, 4, head=0)
    disc = [v for v in validate_radial(g) if v.rule == "disconnected"]
    assert len(disc) == 1
    assert set(disc[0].nodes) == {2, 3}
    # reachability oracle agrees
    import networkx as nx
    assert set(range(4)) - nx.descendants(to_networkx(g), 0) - {0} == {2, 3}


def test_in_degree_two_is_reported():
    g = from_parent_map({1: 0, 2: 0}, 3, head=0)
    g = FeederGraph(g.nodes, g.edges | {(1, 2)}, 0)
    rules = {v.rule for v in validate_radial(g)}
    assert "in-degree" in rules


def test_downstream_examples():
    g = chain([1, 1, 1])
    assert downstream(g, 0) == [1, 2]
    assert downstream(g, 2) == []
    star = from_parent_map({1: 0, 2: 0, 3: 1}, 4, head=0)
    assert downstream(star, 0) == [1, 2, 3]
    with pytest.raises(KeyError):
        downstream(g, 7)


def test_out_degree_histogram_examples():
    assert out_degree_histogram(chain([1, 1, 1])) == pytest.approx({0: 1 / 3, 1: 2 / 3})
    assert out_degree_histogram(chain([1])) == {0: 1.0}
    star = from_parent_map({k: 0 for k in range(1, 5)}, 5, head=0)
    assert out_degree_histogram(star) == pytest.approx({0: 0.8, 4: 0.2})


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_random_trees_satisfy_invariants(m, seed):
    g = random_radial(m, np.random.default_rng(seed))
    assert validate_radial(g) == []
    assert validate_radial(g) == validate_radial(g)
    assert len(g.edges) == m - 1
    assert set(downstream(g, g.head)) | {g.head} == set(range(m))
    assert sum(out_degree_histogram(g).values()) == pytest.approx(1.0, abs=1e-12)
    # traversal order matches a networkx BFS with sorted successors
    import networkx as nx
    assert set(downstream(g, g.head)) == nx.descendants(to_networkx(g), g.head)


def test_update_nodes_checks_length():
    g = chain([1, 2])
    with pytest.raises(ValueError):
        g.update_nodes(length=[1.0])
    assert [n.length for n in g.update_nodes(length=[5.0, 6.0]).nodes] == [5.0, 6.0]
