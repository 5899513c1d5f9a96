import numpy as np
import pytest

from robust_consensus.graph import complete, make_graph, ring


@pytest.fixture
def two_node():
    """Nodes 1 and 2 linked both ways with q = 0.9."""
    return make_graph(2, [(0, 1, 0.9), (1, 0, 0.9)])


@pytest.fixture
def ring5():
    return ring(5, q=0.5)


@pytest.fixture
def complete3():
    return complete(3, q=0.5)


def random_stochastic(rng, n, density=0.6):
    """Row-stochastic matrix with random support (every row non-empty)."""
    A = rng.random((n, n)) * (rng.random((n, n)) < density)
    for i in range(n):
        if A[i].sum() == 0:
            A[i, rng.integers(n)] = 1.0
    return A / A.sum(axis=1, keepdims=True)
