import numpy as np
import pytest

from datamanifold.dataset import Dataset
from datamanifold.neighbors import compute_neighbors


@pytest.fixture
def line_graph():
    """Points 0, 1, 3 on a line with two neighbors each."""
    return compute_neighbors(Dataset(points=np.array([[0.0], [1.0], [3.0]])), maxk=2)


def uniform_graph(n, d, maxk, seed=0):
    pts = np.random.default_rng(seed).random((n, d))
    return pts, compute_neighbors(Dataset(points=pts), maxk=maxk)


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(label, ok, detail)``."""
    lines = request.config.stash[_ACCEPTANCE]

    def record(label, ok, detail=""):
        line = f"{label}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
