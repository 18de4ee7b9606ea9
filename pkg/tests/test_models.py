"""Model zoo: attention against a dense softmax oracle, linearity and
propagation-sharing invariants, and finite-difference checks for every
architecture's forward+loss."""

import numpy as np
import pytest

from kga import diffcore as dc
from kga import models as M
from kga.amalgam import loss_hard
from kga.diffcore import constant, grad_check
from kga.graphcore import SparseGraph, normalize_adjacency
from kga.kan import SplineGrid
from kga.models import ModelSpec, build_model, gat_attention, model_forward, predict


def small_graph(n=6, seed=0, d=3, n_classes=2, p=0.6):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.uniform() < p]
    if not edges:
        edges = [(0, 1)]
    g = SparseGraph(
        n,
        np.array(edges),
        rng.uniform(-0.9, 0.9, size=(n, d)),
        rng.integers(0, n_classes, size=n),
        n_classes,
    )
    return g, normalize_adjacency(g)


def tiny_spec(arch, d=3, n_classes=2, **kw):
    defaults = dict(hidden=4, heads=2, grid_size=5, spline_order=3, dropout=0.5, seed=3)
    defaults.update(kw)
    return ModelSpec(arch, d, n_classes, **defaults)


class TestModelSpec:
    def test_unknown_arch_lists_choices(self):
        with pytest.raises(M.ModelError) as err:
            ModelSpec("resnet", 4, 2)
        assert "kgat1" in str(err.value) and "appnp" in str(err.value)

    def test_heads_must_divide_hidden(self):
        with pytest.raises(M.ModelError):
            ModelSpec("gat", 4, 2, hidden=6, heads=4)

    def test_roundtrip_dict(self):
        spec = tiny_spec("kgcn1")
        assert ModelSpec.from_dict(spec.as_dict()) == spec


class TestBuild:
    def test_same_seed_bit_identical(self):
        for arch in M.ARCHITECTURES:
            a = build_model(tiny_spec(arch, seed=11))
            b = build_model(tiny_spec(arch, seed=11))
            for pa, pb in zip(a.parameters(), b.parameters()):
                assert pa.name == pb.name
                assert np.array_equal(pa.data, pb.data), arch

    def test_seed_changes_params(self):
        a = build_model(tiny_spec("gcn", seed=1))
        b = build_model(tiny_spec("gcn", seed=2))
        assert not np.array_equal(a.w1.data, b.w1.data)

    def test_gat_head_dims_concat_to_hidden(self):
        model = build_model(ModelSpec("gat", in_dim=10, n_classes=3, hidden=32, heads=4))
        assert model.layer1[0]["w"].shape == (10, 8)
        assert len(model.layer1) == 4

    def test_kan_student_dims(self):
        model = build_model(ModelSpec("kan", in_dim=12, n_classes=7, hidden=32))
        assert model.kan1.in_dim == 12 and model.kan1.out_dim == 32
        assert model.kan2.in_dim == 32 and model.kan2.out_dim == 7
        assert model.kan1.grid.size == 32 and model.kan1.grid.order == 3


class TestAttention:
    def test_lone_self_loop_gets_full_weight(self):
        z = constant([[0.7, -0.3]])
        a_dst = constant([[0.5], [1.0]])
        a_src = constant([[-0.2], [0.4]])
        alpha = gat_attention(z, (a_dst, a_src), np.array([0]), np.array([0]), 1, "standard")
        assert alpha.data[0, 0] == pytest.approx(1.0)

    def test_identical_features_give_uniform_weights(self):
        g, av = small_graph(n=5, seed=4)
        src, dst = M._edge_index(av)
        z = constant(np.tile([[0.4, -0.1, 0.2]], (5, 1)))
        rng = np.random.default_rng(0)
        scorer = (constant(rng.normal(size=(3, 1))), constant(rng.normal(size=(3, 1))))
        alpha = gat_attention(z, scorer, src, dst, 5, "standard")
        indeg = np.bincount(dst, minlength=5)
        assert np.allclose(alpha.data[:, 0], 1.0 / indeg[dst])

    @pytest.mark.parametrize("variant", ["standard", "kan_scorer", "kan_transform"])
    def test_rows_sum_to_one(self, variant):
        g, av = small_graph(n=5, seed=7)
        src, dst = M._edge_index(av)
        rng = np.random.default_rng(1)
        z = constant(rng.uniform(-1, 1, size=(5, 4)))
        if variant == "kan_scorer":
            from kga.kan import kan_init

            scorer = kan_init(8, 1, SplineGrid(size=5, order=3), seed=9)
        else:
            scorer = (constant(rng.normal(size=(4, 1))), constant(rng.normal(size=(4, 1))))
        alpha = gat_attention(z, scorer, src, dst, 5, variant)
        sums = np.zeros(5)
        np.add.at(sums, dst, alpha.data[:, 0])
        assert np.max(np.abs(sums - 1.0)) <= 1e-12

    def test_matches_dense_softmax_oracle(self):
        g, av = small_graph(n=5, seed=13)
        src, dst = M._edge_index(av)
        rng = np.random.default_rng(2)
        z = rng.uniform(-1, 1, size=(5, 4))
        a_dst = rng.normal(size=4)
        a_src = rng.normal(size=4)
        alpha = gat_attention(
            z=constant(z),
            scorer=(constant(a_dst.reshape(-1, 1)), constant(a_src.reshape(-1, 1))),
            src=src,
            dst=dst,
            n=5,
            variant="standard",
        )
        # Brute force: for each destination, softmax over its incoming edges.
        raw = z @ a_dst
        raw_src = z @ a_src
        for i in range(5):
            mask = dst == i
            scores = raw[i] + raw_src[src[mask]]
            scores = np.where(scores < 0, M.LEAKY_SLOPE * scores, scores)
            e = np.exp(scores - scores.max())
            want = e / e.sum()
            assert np.allclose(alpha.data[mask, 0], want, atol=1e-12)


class TestForwardContracts:
    def test_sgc_is_linear_in_features(self):
        g, av = small_graph(n=6, seed=17)
        model = build_model(tiny_spec("sgc"))
        rng = np.random.default_rng(3)
        x1 = rng.uniform(-1, 1, (6, 3))
        x2 = rng.uniform(-1, 1, (6, 3))
        a, b = 1.7, -0.6
        lhs = model_forward(model, av, constant(a * x1 + b * x2)).data
        rhs = a * model_forward(model, av, constant(x1)).data + b * model_forward(
            model, av, constant(x2)
        ).data
        assert np.max(np.abs(lhs - rhs)) <= 1e-9

    def test_sgc_zero_hops_is_plain_projection(self):
        g, av = small_graph(n=5, seed=19)
        model = build_model(tiny_spec("sgc", k_hops=0))
        x = np.random.default_rng(4).uniform(-1, 1, (5, 3))
        out = model_forward(model, av, constant(x)).data
        assert np.array_equal(out, x @ model.w.data)

    def test_appnp_full_teleport_equals_mlp(self):
        g, av = small_graph(n=5, seed=23)
        model = build_model(tiny_spec("appnp", alpha=1.0))
        x = np.random.default_rng(5).uniform(-1, 1, (5, 3))
        out = model_forward(model, av, constant(x)).data
        h = np.maximum(x @ model.w1.data + model.b1.data, 0.0)
        want = h @ model.w2.data + model.b2.data
        assert np.array_equal(out, want)

    def test_appnp_and_kappnp_share_propagation(self):
        g, av = small_graph(n=6, seed=29)
        h0 = constant(np.random.default_rng(6).uniform(-1, 1, (6, 2)))
        plain = build_model(tiny_spec("appnp"))
        hybrid = build_model(tiny_spec("kappnp"))
        plain._transform = lambda x, train, rng: h0
        hybrid._transform = lambda x, train, rng: h0
        x = constant(np.zeros((6, 3)))
        out1 = model_forward(plain, av, x).data
        out2 = model_forward(hybrid, av, x).data
        assert np.max(np.abs(out1 - out2)) <= 1e-12

    def test_ksgc_with_identity_kan_approximates_propagation(self):
        # Ring graph keeps propagated values inside the spline domain.
        n = 6
        rng = np.random.default_rng(7)
        g = SparseGraph(
            n,
            [(i, (i + 1) % n) for i in range(n)],
            rng.uniform(-0.8, 0.8, (n, 2)),
            rng.integers(0, 2, n),
            2,
        )
        av = normalize_adjacency(g)
        spec = tiny_spec("ksgc", d=2, n_classes=2, hidden=2, grid_size=32)
        model = build_model(spec)

        from test_kan import fit_identity_coeffs

        grid = model.stack.layers[0].grid
        c = fit_identity_coeffs(grid)
        for layer in model.stack.layers:
            block = np.zeros((2, 2 * grid.n_basis))
            for j in range(2):
                block[j, j * grid.n_basis : (j + 1) * grid.n_basis] = c
            layer.coeffs.data[:] = block
            layer.base_w.data[:] = 0.0
        out = model_forward(model, av, constant(g.features)).data
        dense = av.matrix.toarray()
        want = dense @ dense @ g.features
        assert np.max(np.abs(out - want)) <= 1e-2

    def test_students_ignore_adjacency(self):
        for arch in M.GRAPH_FREE:
            model = build_model(tiny_spec(arch))
            x = constant(np.random.default_rng(8).uniform(-1, 1, (4, 3)))
            out = model_forward(model, None, x)
            assert out.shape == (4, 2)

    def test_graph_models_require_adjacency(self):
        model = build_model(tiny_spec("gcn"))
        with pytest.raises(M.ModelError):
            model_forward(model, None, constant(np.zeros((4, 3))))

    def test_train_mode_needs_rng(self):
        g, av = small_graph()
        model = build_model(tiny_spec("gcn"))
        with pytest.raises(M.ModelError):
            model_forward(model, av, constant(g.features), train=True)

    def test_dropout_only_in_train_mode(self):
        g, av = small_graph()
        model = build_model(tiny_spec("gcn"))
        x = constant(g.features)
        a = model_forward(model, av, x).data
        b = model_forward(model, av, x).data
        assert np.array_equal(a, b)
        rng = np.random.default_rng(0)
        c = model_forward(model, av, x, train=True, rng=rng).data
        assert not np.array_equal(a, c)


@pytest.mark.parametrize("arch", M.ARCHITECTURES)
def test_every_architecture_gradient(arch):
    g, av = small_graph(n=6, seed=37)
    spec = tiny_spec(arch)
    model = build_model(spec)
    x = constant(g.features)
    train_ids = np.array([0, 2, 4])
    use_av = None if arch in M.GRAPH_FREE else av

    def fn():
        logits = model_forward(model, use_av, x, train=False)
        return loss_hard(logits, g.labels, train_ids)

    report = grad_check(fn, model.parameters(), eps=1e-5, tol=1e-4)
    assert report.passed, f"{arch}:\n{report}"


class TestPredict:
    class _Fixed:
        def __init__(self, logits):
            self.spec = ModelSpec("mlp", in_dim=1, n_classes=logits.shape[1], dropout=0.0)
            self._logits = logits

        def forward(self, av, x, train=False, rng=None):
            return constant(self._logits)

        def parameters(self):
            return []

    def test_argmax_and_tie_break(self):
        logits = np.array([[0.1, 0.9, 0.3], [0.5, 0.5, 0.1]])
        model = self._Fixed(logits)
        got = predict(model, None, constant(np.zeros((2, 1))))
        assert got.tolist() == [1, 0]

    def test_shift_and_scale_invariance(self):
        rng = np.random.default_rng(9)
        logits = rng.uniform(-1, 1, (10, 4))
        base = predict(self._Fixed(logits), None, constant(np.zeros((10, 1))))
        shifted = predict(
            self._Fixed(logits + rng.uniform(-5, 5, (10, 1))), None, constant(np.zeros((10, 1)))
        )
        scaled = predict(self._Fixed(logits * 3.7), None, constant(np.zeros((10, 1))))
        assert np.array_equal(base, shifted)
        assert np.array_equal(base, scaled)
