import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthfeeder.corpus import corpus_files, load_corpus
from synthfeeder.graph import PHASES, DeviceNode, FeederGraph


def random_radial(m, rng, shuffle=True, with_phases=True):
    """Random recursive tree on m nodes; ids shuffled so the head is arbitrary."""
    parent = {v: int(rng.integers(v)) for v in range(1, m)}
    perm = rng.permutation(m) if shuffle else np.arange(m)
    nodes = []
    for v in range(m):
        phase = PHASES[int(rng.integers(len(PHASES)))] if with_phases else PHASES[-1]
        nodes.append(DeviceNode(v, float(rng.uniform(1, 700)), float(rng.choice([100, 200, 400])), phase))
    edges = frozenset((int(perm[p]), int(perm[c])) for c, p in parent.items())
    return FeederGraph(tuple(nodes), edges, int(perm[0]))


@pytest.fixture(scope="session")
def corpus():
    return load_corpus()


@pytest.fixture(scope="session")
def corpus_paths():
    return corpus_files()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
