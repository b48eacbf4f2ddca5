import sys

import numpy as np
import pytest

from gdr.affinity import AffinityConfig, build_affinity, symmetrize
from gdr.data_io import make_blobs
from gdr.knn import exact_knn


def random_graph(n, k=5, seed=0, mode="probabilistic"):
    """Symmetric affinity graph from random directed neighbor lists."""
    rng = np.random.default_rng(seed)
    idx = np.array([rng.choice(np.delete(np.arange(n), i), k, replace=False) for i in range(n)])
    cond = rng.uniform(0.05, 1.0, (n, k))
    return symmetrize(idx, cond, mode)


@pytest.fixture
def small_graph():
    return random_graph(30)


@pytest.fixture(scope="session")
def blobs600():
    return make_blobs(600, 3, 10, 10.0, seed=0)


@pytest.fixture(scope="session")
def blobs600_graph(blobs600):
    return build_affinity(exact_knn(blobs600, 15), AffinityConfig())


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
