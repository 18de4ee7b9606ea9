"""Graph structures, normalization, and propagation against dense oracles."""

import numpy as np
import pytest

from kga import diffcore as dc
from kga.diffcore import Parameter, constant, grad_check
from kga.graphcore import (
    GraphError,
    SparseGraph,
    appnp_propagate,
    largest_connected_component,
    make_splits,
    normalize_adjacency,
    propagate_power,
    spmm,
    spmm_counter,
    spmm_counter_reset,
)


def toy_graph(n, edges, n_classes=2, seed=0):
    rng = np.random.default_rng(seed)
    return SparseGraph(
        n, edges, rng.uniform(-1, 1, size=(n, 3)), rng.integers(0, n_classes, size=n), n_classes
    )


def random_graph(n, seed, p=0.5):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p]
    return toy_graph(n, np.array(edges, dtype=np.int64).reshape(-1, 2), seed=seed)


def power_iteration_top_eigenvalue(m, iters=200):
    v = np.ones(m.shape[0]) / np.sqrt(m.shape[0])
    for _ in range(iters):
        w = m @ v
        nrm = np.linalg.norm(w)
        if nrm == 0:
            return 0.0
        v = w / nrm
    return float(v @ (m @ v))


class TestSparseGraph:
    def test_rejects_self_loops(self):
        with pytest.raises(GraphError):
            toy_graph(3, [(0, 0)])

    def test_rejects_out_of_range_edges(self):
        with pytest.raises(GraphError):
            toy_graph(3, [(0, 3)])

    def test_deduplicates_and_symmetrizes(self):
        g = toy_graph(3, [(0, 1), (1, 0), (0, 1), (2, 1)])
        assert g.n_edges == 2
        assert np.array_equal(g.edges, [[0, 1], [1, 2]])


class TestNormalizeAdjacency:
    def test_single_node(self):
        av = normalize_adjacency(toy_graph(1, np.zeros((0, 2), dtype=np.int64)))
        assert np.allclose(av.matrix.toarray(), [[1.0]])

    def test_two_node_path(self):
        av = normalize_adjacency(toy_graph(2, [(0, 1)]))
        assert np.allclose(av.matrix.toarray(), 0.5)

    def test_triangle(self):
        av = normalize_adjacency(toy_graph(3, [(0, 1), (1, 2), (0, 2)]))
        assert np.allclose(av.matrix.toarray(), 1.0 / 3.0)

    def test_isolated_node_keeps_unit_self_loop(self):
        av = normalize_adjacency(toy_graph(3, [(0, 1)]))
        assert av.matrix.toarray()[2, 2] == pytest.approx(1.0)

    def test_symmetry_and_spectral_bound(self):
        for seed in range(5):
            g = random_graph(8, seed=seed)
            m = normalize_adjacency(g).matrix.toarray()
            assert np.max(np.abs(m - m.T)) <= 1e-12
            assert power_iteration_top_eigenvalue(m) <= 1.0 + 1e-9


class TestLargestConnectedComponent:
    def test_connected_graph_unchanged(self):
        g = toy_graph(4, [(0, 1), (1, 2), (2, 3)])
        sub, id_map = largest_connected_component(g)
        assert sub.n_nodes == 4 and sub.n_edges == 3
        assert id_map == {0: 0, 1: 1, 2: 2, 3: 3}

    def test_keeps_larger_component(self):
        g = toy_graph(5, [(0, 1), (1, 2), (3, 4)])
        sub, id_map = largest_connected_component(g)
        assert sub.n_nodes == 3
        assert set(id_map) == {0, 1, 2}
        assert np.array_equal(sub.features, g.features[[0, 1, 2]])
        assert np.array_equal(sub.labels, g.labels[[0, 1, 2]])

    def test_tie_broken_by_smallest_original_id(self):
        g = toy_graph(4, [(1, 3), (0, 2)])
        sub, id_map = largest_connected_component(g)
        assert set(id_map) == {0, 2}


class TestSpmm:
    def test_identity_passthrough(self):
        g = toy_graph(3, np.zeros((0, 2), dtype=np.int64))
        av = normalize_adjacency(g)  # isolated nodes: identity matrix
        h = constant(np.arange(6.0).reshape(3, 2))
        assert np.array_equal(spmm(av, h).data, h.data)

    def test_triangle_preserves_constant_column(self):
        av = normalize_adjacency(toy_graph(3, [(0, 1), (1, 2), (0, 2)]))
        out = spmm(av, constant(np.ones((3, 1))))
        assert np.allclose(out.data, 1.0)

    def test_matches_dense_oracle_on_all_small_graphs(self):
        rng = np.random.default_rng(31)
        for n in range(2, 9):
            for trial in range(3):
                g = random_graph(n, seed=100 * n + trial)
                av = normalize_adjacency(g)
                h = rng.uniform(-2, 2, size=(n, 4))
                got = spmm(av, constant(h)).data
                want = av.matrix.toarray() @ h
                assert np.max(np.abs(got - want)) <= 1e-12

    def test_differentiable_in_dense_operand(self):
        g = random_graph(5, seed=3)
        av = normalize_adjacency(g)
        h = Parameter(np.random.default_rng(5).uniform(-1, 1, (5, 3)), "h")
        report = grad_check(lambda: dc.mean(dc.silu(spmm(av, h))), [h])
        assert report.passed, report

    def test_counter_counts_calls(self):
        g = random_graph(4, seed=9)
        av = normalize_adjacency(g)
        spmm_counter_reset()
        propagate_power(av, constant(np.ones((4, 2))), 3)
        assert spmm_counter() == 3


class TestPropagatePower:
    def test_zero_power_returns_input(self):
        g = random_graph(4, seed=1)
        av = normalize_adjacency(g)
        x = constant(np.random.default_rng(0).uniform(-1, 1, (4, 2)))
        assert propagate_power(av, x, 0) is x

    def test_identity_adjacency(self):
        g = toy_graph(3, np.zeros((0, 2), dtype=np.int64))
        av = normalize_adjacency(g)
        x = constant(np.random.default_rng(2).uniform(-1, 1, (3, 2)))
        assert np.array_equal(propagate_power(av, x, 2).data, x.data)

    def test_squared_propagation_matches_dense(self):
        g = random_graph(6, seed=41)
        av = normalize_adjacency(g)
        x = np.random.default_rng(4).uniform(-1, 1, (6, 3))
        got = propagate_power(av, constant(x), 2).data
        dense = av.matrix.toarray()
        assert np.max(np.abs(got - dense @ dense @ x)) <= 1e-12


class TestAppnpPropagate:
    def test_full_teleport_is_fixed_point(self):
        g = random_graph(5, seed=7)
        av = normalize_adjacency(g)
        h0 = constant(np.random.default_rng(6).uniform(-1, 1, (5, 2)))
        out = appnp_propagate(av, h0, alpha=1.0, k=25)
        assert np.array_equal(out.data, h0.data)

    def test_zero_iterations_return_start(self):
        g = random_graph(5, seed=8)
        av = normalize_adjacency(g)
        h0 = constant(np.ones((5, 2)))
        assert appnp_propagate(av, h0, alpha=0.3, k=0) is h0

    def test_converges_to_linear_solve_oracle(self):
        g = random_graph(5, seed=43)
        av = normalize_adjacency(g)
        h0 = np.random.default_rng(8).uniform(-1, 1, (5, 3))
        alpha = 0.1
        got = appnp_propagate(av, constant(h0), alpha, 50).data
        a = av.matrix.toarray()
        want = alpha * np.linalg.solve(np.eye(5) - (1 - alpha) * a, h0)
        assert np.max(np.abs(got - want)) <= 1e-6

    def test_successive_differences_non_increasing(self):
        g = random_graph(6, seed=45)
        av = normalize_adjacency(g)
        h0 = constant(np.random.default_rng(10).uniform(-1, 1, (6, 2)))
        prev = h0.data
        diffs = []
        for k in range(1, 12):
            cur = appnp_propagate(av, h0, alpha=0.1, k=k).data
            diffs.append(np.max(np.abs(cur - prev)))
            prev = cur
        assert all(d2 <= d1 + 1e-15 for d1, d2 in zip(diffs, diffs[1:]))

    def test_differentiable_through_propagation(self):
        g = random_graph(4, seed=47)
        av = normalize_adjacency(g)
        h0 = Parameter(np.random.default_rng(12).uniform(-1, 1, (4, 2)), "h0")
        report = grad_check(lambda: dc.mean(appnp_propagate(av, h0, 0.2, 6)), [h0])
        assert report.passed, report

    def test_alpha_validation(self):
        g = random_graph(3, seed=49)
        av = normalize_adjacency(g)
        with pytest.raises(GraphError):
            appnp_propagate(av, constant(np.ones((3, 1))), alpha=0.0, k=3)


class TestMakeSplits:
    def labels(self, per_class, n_classes=3):
        return np.repeat(np.arange(n_classes), per_class)

    def test_counts_per_class(self):
        labels = self.labels(80)
        split = make_splits(labels, 3, seed=0)
        assert split.train.size == 60 and split.val.size == 90
        assert split.test.size == labels.size - 150
        for c in range(3):
            assert np.sum(labels[split.train] == c) == 20
            assert np.sum(labels[split.val] == c) == 30

    def test_deterministic_and_seed_sensitive(self):
        labels = self.labels(60)
        a = make_splits(labels, 3, seed=5)
        b = make_splits(labels, 3, seed=5)
        c = make_splits(labels, 3, seed=6)
        assert np.array_equal(a.train, b.train) and np.array_equal(a.val, b.val)
        assert not (np.array_equal(a.train, c.train) and np.array_equal(a.val, c.val))

    def test_disjoint_and_covering(self):
        labels = self.labels(55, n_classes=4)
        split = make_splits(labels, 4, seed=1)
        all_ids = np.concatenate([split.train, split.val, split.test])
        assert np.array_equal(np.sort(all_ids), np.arange(labels.size))

    def test_small_class_error_names_class(self):
        labels = np.concatenate([np.zeros(60, dtype=int), np.ones(49, dtype=int)])
        with pytest.raises(GraphError) as err:
            make_splits(labels, 2, seed=0)
        assert "class 1" in str(err.value)

    def test_roundtrip_through_dict(self):
        split = make_splits(self.labels(51), 3, seed=9)
        from kga.graphcore import SplitAssignment

        again = SplitAssignment.from_dict(split.as_dict())
        assert np.array_equal(split.train, again.train)
        assert np.array_equal(split.test, again.test)
