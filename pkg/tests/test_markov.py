import io
import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_consensus.graph import complete, make_graph, random_graph, ring, star
from robust_consensus.markov import (
    ProductState,
    accumulate,
    build_matrix,
    ideal_matrix,
    oracle_check,
    write_matrix_csv,
)
from robust_consensus.protocol import InitialConditions
from robust_consensus.simulator import DropMask, Mode, RunConfig, all_reliable, replay, run


def every_mask(g):
    for bits in itertools.product((False, True), repeat=len(g.buffer_edges)):
        yield DropMask(1, bits)


class TestBuildMatrix:
    def test_two_node_all_reliable(self, two_node):
        M = build_matrix(two_node, DropMask(1, [True, True])).values
        expected = np.array([
            [0.5, 0.5, 0, 0],
            [0.5, 0.5, 0, 0],
            [0, 1, 0, 0],
            [1, 0, 0, 0],
        ])
        assert np.array_equal(M, expected)

    def test_two_node_one_drop(self, two_node):
        M = build_matrix(two_node, DropMask(1, [False, True])).values
        assert np.array_equal(M[0], [0.5, 0, 0.5, 0])
        assert np.array_equal(M[2], [0, 0, 1, 0])
        assert np.array_equal(M[1], [0.5, 0.5, 0, 0])
        assert np.array_equal(M[3], [1, 0, 0, 0])

    def test_reliable_node_block_is_ideal_matrix(self):
        g = random_graph(5, np.random.default_rng(1), edge_prob=0.4)
        M = build_matrix(g, all_reliable(g, 1)).values
        assert np.array_equal(M[: g.m, : g.m], ideal_matrix(g))
        assert np.all(M[:, g.m:] == 0)

    @pytest.mark.parametrize("g", [
        complete(2), ring(4), star(2), complete(3), make_graph(3, [(0, 1), (1, 2), (2, 0), (0, 2)]),
        ring(5), make_graph(4, [(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 0), (0, 3), (0, 2), (1, 3)]),
    ])
    def test_all_masks_exhaustively(self, g):
        m = g.m
        c = 1.0 / g.degrees.max()
        seen = set()
        for mask in every_mask(g):
            M = build_matrix(g, mask).values
            seen.add(M.tobytes())
            assert np.all(np.abs(M.sum(axis=1) - 1) <= 1e-12)
            assert np.all(M[M > 0] >= c)
            for b, e in enumerate(g.buffer_edges):
                i, j, buf = e.source, e.target, m + b
                pair = (M[i, j], M[i, buf])
                assert sum(pair) == pytest.approx(1.0 / g.degrees[i], abs=1e-15)
                assert 0.0 in pair
        # one distinct matrix per mask
        assert len(seen) == 2 ** len(g.buffer_edges)


class TestAccumulate:
    def test_identity_base(self, two_node):
        M = build_matrix(two_node, DropMask(1, [False, True]))
        p = accumulate(ProductState.identity(4), M)
        assert np.array_equal(p.T, M.values)

    def test_two_reliable_steps(self, two_node):
        M = build_matrix(two_node, all_reliable(two_node, 1))
        p = accumulate(accumulate(ProductState.identity(4), M), M)
        assert np.array_equal(p.T, M.values @ M.values)
        assert np.all(p.T[:, :2] >= 0.25)

    def test_long_product_stays_stochastic(self, ring5):
        rng = np.random.default_rng(0)
        p = ProductState.identity(ring5.n)
        for k in range(1, 10_001):
            p = accumulate(p, build_matrix(ring5, DropMask(k, rng.random(5) < 0.5)))
        assert np.max(np.abs(p.T.sum(axis=1) - 1)) <= 1e-10

    def test_blocks_emitted(self, two_node):
        rng = np.random.default_rng(3)
        Ms = [build_matrix(two_node, DropMask(k, rng.random(2) < 0.5)) for k in range(1, 7)]
        p = ProductState.identity(4, block_length=3)
        blocks = []
        for M in Ms:
            p = accumulate(p, M)
            if p.completed is not None:
                blocks.append(p.completed)
        assert len(blocks) == 2
        assert np.allclose(blocks[0], Ms[0].values @ Ms[1].values @ Ms[2].values)
        assert np.allclose(blocks[0] @ blocks[1], p.T)

    def test_dimension_mismatch(self, two_node):
        with pytest.raises(ValueError):
            accumulate(ProductState.identity(3), build_matrix(two_node, all_reliable(two_node, 1)))

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            accumulate(ProductState.identity(2), np.array([[0.5, 0.6], [0.5, 0.5]]))


class TestOracle:
    def test_two_node_seed_42(self, two_node):
        trace = run(RunConfig(two_node, InitialConditions([1.0, 3.0], [1.0, 1.0]), steps=100, seed=42))
        rep = oracle_check(trace, two_node, tol=1e-12)
        assert rep.passed
        assert rep.max_deviation <= 1e-12

    def test_reliable_run_matches_ideal(self, ring5):
        init = InitialConditions.average([5.0, 0, 1, 0, 2])
        robust = replay(RunConfig(ring5, init, steps=50), [all_reliable(ring5, k) for k in range(1, 51)])
        ideal = run(RunConfig(ring5, init, steps=50, mode=Mode.IDEAL))
        assert oracle_check(robust, ring5).passed
        assert oracle_check(ideal, ring5).passed
        assert np.all(robust.nu_y == 0)

    def test_detects_corruption(self, ring5):
        trace = run(RunConfig(ring5, InitialConditions.average([5.0, 0, 1, 0, 2]), steps=30, seed=5))
        trace.y[17, 2] += 1e-6
        rep = oracle_check(trace, ring5, tol=1e-10)
        assert not rep.passed
        assert rep.first_failure == (17, 2)

    def test_zero_tolerance_fails(self, complete3):
        trace = run(RunConfig(complete3, InitialConditions.average([0.1, 0.7, 0.3]), steps=200, seed=1))
        assert not oracle_check(trace, complete3, tol=0.0).passed


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_protocol_matrix_equivalence(m, graph_seed, seed):
    g = random_graph(m, np.random.default_rng(graph_seed))
    y0 = np.random.default_rng(seed).random(m) * 10
    trace = run(RunConfig(g, InitialConditions.average(y0), steps=200, seed=seed))
    assert oracle_check(trace, g, tol=1e-10).passed


def test_matrix_csv(two_node):
    buf = io.StringIO()
    write_matrix_csv(two_node, build_matrix(two_node, all_reliable(two_node, 1)).values, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "row,1,2,1->2,2->1"
    assert lines[3] == "1->2,0,1,0,0"
