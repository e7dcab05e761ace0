import logging
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_radial
from synthfeeder.graph import DeviceNode, FeederGraph, Phase, chain, from_parent_map
from synthfeeder.ingest import (FeatureScales, FeederFormatError, RawDevice, TopologyError,
                                adjacency_matrix, compute_topological_features, decode_numeric,
                                device_as_node, encode_attributes, load_feeder, normalize_adjacency,
                                parse_feeder_file, read_feeder_file)

FIVE = Path(__file__).parent / "data" / "five.feeder"


def test_two_line_file():
    raw = parse_feeder_file("source sub\ndevice L1 from=sub to=b1 phase=a length_m=10 normamps=100\n")
    assert raw.source_bus == "sub"
    assert len(raw.devices) == 1
    assert raw.devices[0] == RawDevice("L1", "sub", "b1", Phase.A, 10.0, 100.0, None)


def test_undeclared_bus_names_line():
    text = "source sub\ndevice L1 from=sub to=b1 phase=a length_m=10 normamps=100\n" \
           "device L2 from=bX to=b2 phase=a length_m=10 normamps=100\n"
    with pytest.raises(FeederFormatError) as err:
        parse_feeder_file(text)
    assert err.value.line == 3
    assert "bX" in str(err.value)


@pytest.mark.parametrize("text,line", [
    ("device L1 from=sub to=b1 phase=a length_m=10 normamps=100\n", None),
    ("source sub\ndevice L1 from=sub to=b1 phase=a length_m=ten normamps=100\n", 2),
    ("source sub\n\ndevice L1 from=sub to=b1 phase=q length_m=1 normamps=100\n", 3),
    ("source sub\ndevice L1 from=sub to=b1 phase=a length_m=1 normamps=100\n"
     "device L1 from=b1 to=b2 phase=a length_m=1 normamps=100\n", 3),
])
def test_parse_errors(text, line):
    with pytest.raises(FeederFormatError) as err:
        parse_feeder_file(text)
    assert err.value.line == line


def test_unknown_key_is_a_warning(caplog):
    with caplog.at_level(logging.WARNING):
        raw = read_feeder_file(FIVE)
    assert "color" in caplog.text
    assert len(raw.devices) == 5


def test_five_device_fixture_matches_hand_model():
    raw = read_feeder_file(FIVE)
    expected = [
        RawDevice("L1", "sub", "b1", Phase.ABC, 100.0, 400.0, None),
        RawDevice("L2", "b1", "b2", Phase.ABC, 50.0, 400.0, None),
        RawDevice("L3", "b2", "b3", Phase.A, 30.5, 200.0, 25.0),
        RawDevice("L4", "b2", "b4", Phase.ABC, 80.0, 300.0, None),
        RawDevice("L5", "b4", "b5", Phase.BC, 20.0, 300.0, 50.0),
    ]
    assert list(raw.devices) == expected
    assert raw.buses == ("sub", "b1", "b2", "b3", "b4", "b5")

    g = load_feeder(FIVE)
    assert g.head == 0
    assert g.edges == {(0, 1), (1, 2), (1, 3), (3, 4)}
    assert [n.distance for n in g.nodes] == pytest.approx([100, 150, 180.5, 230, 250])
    assert [n.pseudo_load for n in g.nodes] == pytest.approx([75, 75, 25, 50, 50])
    assert [n.level for n in g.nodes] == [0, 0, 1, 1, 1]


def test_device_as_node_examples():
    raw = parse_feeder_file("source sub\n"
                            "device L1 from=sub to=b1 phase=abc length_m=1 normamps=100\n"
                            "device L2 from=b1 to=b2 phase=abc length_m=1 normamps=100\n")
    g = device_as_node(raw)
    assert g.edges == {(0, 1)} and g.head == 0
    assert all(n.distance == 0 and n.level == 0 for n in g.nodes)

    raw = parse_feeder_file("source sub\n"
                            "device L1 from=sub to=b1 phase=abc length_m=1 normamps=100\n"
                            "device L2 from=b1 to=b2 phase=abc length_m=1 normamps=100\n"
                            "device L3 from=b1 to=b3 phase=abc length_m=1 normamps=100\n")
    assert device_as_node(raw).edges == {(0, 1), (0, 2)}


def test_loop_is_rejected():
    raw = parse_feeder_file("source sub\n"
                            "device L1 from=sub to=b1 phase=abc length_m=1 normamps=100\n"
                            "device L2 from=b1 to=b2 phase=abc length_m=1 normamps=100\n"
                            "device L3 from=b2 to=sub phase=abc length_m=1 normamps=100\n")
    with pytest.raises(TopologyError, match="Assumption 1"):
        device_as_node(raw)


def test_two_devices_leaving_source_rejected():
    raw = parse_feeder_file("source sub\n"
                            "device L1 from=sub to=b1 phase=abc length_m=1 normamps=100\n"
                            "device L2 from=sub to=b2 phase=abc length_m=1 normamps=100\n")
    with pytest.raises(TopologyError):
        device_as_node(raw)


def test_topological_feature_examples():
    g = compute_topological_features(chain([100, 50]))
    assert [n.distance for n in g.nodes] == [100, 150]

    nodes = (DeviceNode(0, 1, 400, Phase.ABC), DeviceNode(1, 1, 400, Phase.A),
             DeviceNode(2, 1, 400, Phase.ABC))
    g = compute_topological_features(FeederGraph(nodes, frozenset({(0, 1), (0, 2)}), 0))
    assert [n.level for n in g.nodes] == [0, 1, 0]

    nodes = (DeviceNode(0, 1, 100, Phase.ABC), DeviceNode(1, 1, 100, Phase.ABC),
             DeviceNode(2, 1, 100, Phase.ABC, xfmr_kva=25))
    g = compute_topological_features(FeederGraph(nodes, frozenset({(0, 1), (1, 2)}), 0))
    assert [n.pseudo_load for n in g.nodes] == [25, 25, 25]


def test_level_is_capped():
    # a comb where every tooth-side bifurcation changes conductor
    m = 30
    parents = {}
    for k in range(1, m):
        parents[k] = k - 2 if k % 2 == 0 and k >= 2 else max(k - 1, 0)
    g = from_parent_map(parents, m, 0)
    amps = [700.0 - 20 * k for k in range(m)]
    g = compute_topological_features(g.update_nodes(norm_amps=amps), level_cap=3)
    assert max(n.level for n in g.nodes) == 3


def test_normalize_adjacency_examples():
    assert normalize_adjacency(np.array([[0.0]])).tolist() == [[1.0]]
    assert normalize_adjacency(np.array([[0, 1], [0, 0]])).tolist() == [[0.5, 0.5], [0.0, 1.0]]
    star = np.array([[0, 1, 1], [0, 0, 0], [0, 0, 0]])
    assert normalize_adjacency(star).sum(axis=1).tolist() == [1.0, 1.0, 1.0]
    with pytest.raises(ValueError):
        normalize_adjacency(np.zeros((2, 3)))


def _scales(**hi):
    lo = {"length": 0.0, "norm_amps": 100.0, "distance": 0.0, "pseudo_load": 0.0}
    top = {"length": 800.0, "norm_amps": 700.0, "distance": 5000.0, "pseudo_load": 1000.0}
    top.update(hi)
    return FeatureScales(lo, top)


def test_encode_examples():
    nodes = (DeviceNode(0, 400, 100, Phase.ABC, distance=400), DeviceNode(1, 800, 100, Phase.AB, distance=1200))
    g = FeederGraph(nodes, frozenset({(0, 1)}), 0)
    t = encode_attributes(g, _scales())
    assert t.x_num[0, 0] == 0.0
    assert t.x_num[1, 0] == 1.0
    assert t.x_cat_phase[1].tolist() == [0, 0, 0, 1, 0, 0, 0]
    assert t.x_cat_level.shape == (2, 11)
    assert t.a_norm.sum(axis=1) == pytest.approx([1, 1], abs=1e-12)


def test_encode_rejects_out_of_scale_feature():
    g = chain([900.0])
    with pytest.raises(ValueError, match="length"):
        encode_attributes(g, _scales())


def test_scales_json_roundtrip(tmp_path):
    s = _scales()
    s.save(tmp_path / "s.json")
    back = FeatureScales.load(tmp_path / "s.json")
    assert back.lo == s.lo and back.hi == s.hi and back.level_cap == s.level_cap


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_encode_decode_roundtrip(m, seed):
    rng = np.random.default_rng(seed)
    g = compute_topological_features(random_radial(m, rng))
    g = g.update_nodes(pseudo_load=list(rng.uniform(0, 900, m)))
    scales = FeatureScales.from_graphs([g])
    t = encode_attributes(g, scales)
    assert (np.abs(t.x_num) <= 1.0).all()
    assert (t.x_cat_phase.sum(axis=1) == 1).all() and (t.x_cat_level.sum(axis=1) == 1).all()
    back = decode_numeric(t.x_num, scales)
    for f in ("length", "norm_amps", "distance", "pseudo_load"):
        want = np.array([getattr(n, f) for n in g.nodes])
        assert np.allclose(back[f], want, rtol=1e-9, atol=1e-9)
    assert [int(k) for k in t.x_cat_phase.argmax(axis=1)] == [n.phase.index for n in g.nodes]


def test_permuted_tensors_track_head():
    g = compute_topological_features(chain([1, 2, 3]))
    t = encode_attributes(g, FeatureScales.from_graphs([g]))
    p = t.permuted([2, 0, 1])
    assert p.head_index == 1
    assert np.array_equal(p.a_norm, t.a_norm[np.ix_([2, 0, 1], [2, 0, 1])])
    assert np.array_equal(adjacency_matrix(g), (t.a_norm > 0).astype(float) - np.eye(3))
