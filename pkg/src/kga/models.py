"""The twelve-architecture model zoo.

Teachers: gcn, gat, sgc, appnp and their KAN hybrids kgcn1, kgcn2, kgat1,
kgat2, ksgc, kappnp. Graph-free students: mlp, kan. Every model exposes
forward(av, x, train, rng) -> raw class logits; students ignore av and
never touch a sparse-graph kernel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import diffcore as dc
from . import graphcore as gc
from .diffcore import Parameter, Tensor, constant
from .graphcore import NormalizedAdjacency, appnp_propagate, propagate_power, spmm
from .kan import KanLayer, KanStack, SplineGrid, kan_init


class ModelError(ValueError):
    """Unknown architecture or invalid model configuration."""


ARCHITECTURES = (
    "gcn", "gat", "sgc", "appnp",
    "kgcn1", "kgcn2", "kgat1", "kgat2", "ksgc", "kappnp",
    "mlp", "kan",
)
GRAPH_FREE = ("mlp", "kan")
LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class ModelSpec:
    """Architecture choice plus every knob a build needs; unused knobs are ignored."""

    arch: str
    in_dim: int
    n_classes: int
    hidden: int = 32
    heads: int = 4
    k_hops: int = 2
    appnp_k: int = 10
    alpha: float = 0.1
    grid_size: int = 32
    spline_order: int = 3
    dropout: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ModelError(
                f"unknown architecture {self.arch!r}; choose one of {', '.join(ARCHITECTURES)}"
            )
        if self.in_dim < 1 or self.n_classes < 1 or self.hidden < 1:
            raise ModelError("model dimensions must be >= 1")
        if self.arch in ("gat", "kgat1", "kgat2") and self.hidden % self.heads:
            raise ModelError(
                f"hidden dim {self.hidden} must be divisible by {self.heads} heads"
            )

    def with_seed(self, seed: int) -> "ModelSpec":
        return replace(self, seed=seed)

    def as_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ModelSpec":
        return ModelSpec(**d)


def _glorot(rng, d_in, d_out):
    bound = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-bound, bound, size=(d_in, d_out))


def _linear(rng, d_in, d_out, name):
    w = Parameter(_glorot(rng, d_in, d_out), f"{name}.w")
    b = Parameter(np.zeros((1, d_out)), f"{name}.b")
    return w, b


def _dropout(t: Tensor, rate: float, train: bool, rng) -> Tensor:
    if not train or rate <= 0.0:
        return t
    keep = 1.0 - rate
    mask = (rng.uniform(size=t.shape) < keep).astype(np.float64) / keep
    return dc.hadamard(t, constant(mask))


def _child_seed(rng) -> int:
    return int(rng.integers(0, 2**31 - 1))


def _edge_index(av: NormalizedAdjacency):
    """Directed (src, dst) arrays from the normalized pattern (self-loops included)."""
    coo = av.matrix.tocoo()
    return coo.col, coo.row


def gat_attention(z: Tensor, scorer, src, dst, n: int, variant: str) -> Tensor:
    """Per-edge attention weights, softmax-normalized over each node's in-edges.

    z holds the transformed node features entering both the score and the
    update. variant picks the score rule: "standard" and "kan_transform"
    apply LeakyReLU(a^T [z_i || z_j]) with scorer = (a_dst, a_src) column
    vectors; "kan_scorer" feeds the concatenated pair through a KAN layer
    and exponentiates it directly.
    """
    gc.count_sparse_op()
    if variant in ("standard", "kan_transform"):
        a_dst, a_src = scorer
        per_node_dst = dc.matmul(z, a_dst)
        per_node_src = dc.matmul(z, a_src)
        scores = dc.add(dc.gather_rows(per_node_dst, dst), dc.gather_rows(per_node_src, src))
        scores = dc.leaky_relu(scores, LEAKY_SLOPE)
    elif variant == "kan_scorer":
        pair = dc.concat_cols(dc.gather_rows(z, dst), dc.gather_rows(z, src))
        scores = scorer.forward(pair)
    else:
        raise ModelError(f"unknown attention variant {variant!r}")

    # Shift by the per-destination max (a constant) before exponentiating.
    shift = np.full(n, -np.inf)
    np.maximum.at(shift, dst, scores.data[:, 0])
    exp_scores = dc.exp(dc.add(scores, constant(-shift[dst].reshape(-1, 1))))
    denom = dc.scatter_add_rows(exp_scores, dst, n)
    return dc.div(exp_scores, dc.gather_rows(denom, dst))


def _attention_aggregate(z: Tensor, alpha: Tensor, src, dst, n: int) -> Tensor:
    messages = dc.hadamard(alpha, dc.gather_rows(z, src))
    return dc.scatter_add_rows(messages, dst, n)


class _GatFamily:
    """Two attention layers: heads concatenated on the hidden layer, averaged
    on the output layer."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        grid = SplineGrid(size=spec.grid_size, order=spec.spline_order)
        dh = spec.hidden // spec.heads
        self.layer1 = [
            self._head(rng, spec.in_dim, dh, grid, f"l1.h{i}") for i in range(spec.heads)
        ]
        self.layer2 = [
            self._head(rng, spec.hidden, spec.n_classes, grid, f"l2.h{i}")
            for i in range(spec.heads)
        ]

    def _head(self, rng, d_in, d_out, grid, name):
        head = {}
        if self.spec.arch == "kgat2":
            head["kan"] = kan_init(d_in, d_out, grid, _child_seed(rng), f"{name}.kan")
        else:
            head["w"] = Parameter(_glorot(rng, d_in, d_out), f"{name}.w")
        if self.spec.arch == "kgat1":
            head["a_kan"] = kan_init(2 * d_out, 1, grid, _child_seed(rng), f"{name}.a_kan")
        else:
            bound = np.sqrt(6.0 / (2 * d_out + 1))
            head["a_dst"] = Parameter(
                rng.uniform(-bound, bound, (d_out, 1)), f"{name}.a_dst"
            )
            head["a_src"] = Parameter(
                rng.uniform(-bound, bound, (d_out, 1)), f"{name}.a_src"
            )
        return head

    def _head_forward(self, head, h: Tensor, src, dst, n: int) -> Tensor:
        arch = self.spec.arch
        if arch == "kgat2":
            z = head["kan"].forward(h)
            alpha = gat_attention(z, (head["a_dst"], head["a_src"]), src, dst, n, "kan_transform")
        elif arch == "kgat1":
            z = dc.matmul(h, head["w"])
            alpha = gat_attention(z, head["a_kan"], src, dst, n, "kan_scorer")
        else:
            z = dc.matmul(h, head["w"])
            alpha = gat_attention(z, (head["a_dst"], head["a_src"]), src, dst, n, "standard")
        return _attention_aggregate(z, alpha, src, dst, n)

    def forward(self, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
        src, dst = _edge_index(av)
        n = av.n_nodes
        h = _dropout(x, self.spec.dropout, train, rng)
        parts = [self._head_forward(head, h, src, dst, n) for head in self.layer1]
        h = parts[0]
        for part in parts[1:]:
            h = dc.concat_cols(h, part)
        h = dc.leaky_relu(h, LEAKY_SLOPE)
        h = _dropout(h, self.spec.dropout, train, rng)
        outs = [self._head_forward(head, h, src, dst, n) for head in self.layer2]
        total = outs[0]
        for out in outs[1:]:
            total = dc.add(total, out)
        return dc.scale(total, 1.0 / self.spec.heads)

    def parameters(self):
        out = []
        for head in self.layer1 + self.layer2:
            for key in ("w", "a_dst", "a_src"):
                if key in head:
                    out.append(head[key])
            for key in ("kan", "a_kan"):
                if key in head:
                    out.extend(head[key].parameters())
        return out


class _GcnFamily:
    """Two convolution layers; the KAN variants wrap either side of spmm."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        if spec.arch == "gcn":
            self.w1, self.b1 = _linear(rng, spec.in_dim, spec.hidden, "l1")
            self.w2, self.b2 = _linear(rng, spec.hidden, spec.n_classes, "l2")
        else:
            grid = SplineGrid(size=spec.grid_size, order=spec.spline_order)
            self.kan1 = kan_init(spec.in_dim, spec.hidden, grid, _child_seed(rng), "l1.kan")
            self.kan2 = kan_init(spec.hidden, spec.n_classes, grid, _child_seed(rng), "l2.kan")

    def forward(self, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
        arch = self.spec.arch
        h = _dropout(x, self.spec.dropout, train, rng)
        if arch == "gcn":
            h = dc.relu(dc.add(dc.matmul(spmm(av, h), self.w1), self.b1))
            h = _dropout(h, self.spec.dropout, train, rng)
            return dc.add(dc.matmul(spmm(av, h), self.w2), self.b2)
        if arch == "kgcn1":  # convolve, then transform
            h = self.kan1.forward(spmm(av, h))
            h = _dropout(h, self.spec.dropout, train, rng)
            return self.kan2.forward(spmm(av, h))
        # kgcn2: transform, then convolve
        h = spmm(av, self.kan1.forward(h))
        h = _dropout(h, self.spec.dropout, train, rng)
        return spmm(av, self.kan2.forward(h))

    def parameters(self):
        if self.spec.arch == "gcn":
            return [self.w1, self.b1, self.w2, self.b2]
        return self.kan1.parameters() + self.kan2.parameters()


class _SgcFamily:
    """Single transform of the k-hop propagated features; no dropout.

    The propagated product is cached per (adjacency, features) pair, so
    repeated epochs pay for propagation once.
    """

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        if spec.arch == "sgc":
            # Plain linear map, bias-free: the whole forward stays linear in x.
            self.w = Parameter(_glorot(rng, spec.in_dim, spec.n_classes), "l1.w")
        else:
            grid = SplineGrid(size=spec.grid_size, order=spec.spline_order)
            self.stack = KanStack(
                [
                    kan_init(spec.in_dim, spec.hidden, grid, _child_seed(rng), "l1.kan"),
                    kan_init(spec.hidden, spec.n_classes, grid, _child_seed(rng), "l2.kan"),
                ]
            )
        self._cache = None

    def _propagated(self, av, x: Tensor) -> Tensor:
        key = (id(av), id(x))
        if x.requires_grad:  # never cache a tape-bound input
            return propagate_power(av, x, self.spec.k_hops)
        if self._cache is None or self._cache[0] != key:
            self._cache = (key, propagate_power(av, x, self.spec.k_hops))
        return self._cache[1]

    def forward(self, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
        s = self._propagated(av, x)
        if self.spec.arch == "sgc":
            return dc.matmul(s, self.w)
        return self.stack.forward(s)

    def parameters(self):
        if self.spec.arch == "sgc":
            return [self.w]
        return self.stack.parameters()


class _AppnpFamily:
    """Feature transform (MLP or KAN stack) followed by personalized-PageRank
    propagation of the logits."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        if spec.arch == "appnp":
            self.w1, self.b1 = _linear(rng, spec.in_dim, spec.hidden, "l1")
            self.w2, self.b2 = _linear(rng, spec.hidden, spec.n_classes, "l2")
        else:
            grid = SplineGrid(size=spec.grid_size, order=spec.spline_order)
            self.kan1 = kan_init(spec.in_dim, spec.hidden, grid, _child_seed(rng), "l1.kan")
            self.kan2 = kan_init(spec.hidden, spec.n_classes, grid, _child_seed(rng), "l2.kan")

    def _transform(self, x: Tensor, train: bool, rng) -> Tensor:
        h = _dropout(x, self.spec.dropout, train, rng)
        if self.spec.arch == "appnp":
            h = dc.relu(dc.add(dc.matmul(h, self.w1), self.b1))
            h = _dropout(h, self.spec.dropout, train, rng)
            return dc.add(dc.matmul(h, self.w2), self.b2)
        h = self.kan1.forward(h)
        h = _dropout(h, self.spec.dropout, train, rng)
        return self.kan2.forward(h)

    def forward(self, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h0 = self._transform(x, train, rng)
        return appnp_propagate(av, h0, self.spec.alpha, self.spec.appnp_k)

    def parameters(self):
        if self.spec.arch == "appnp":
            return [self.w1, self.b1, self.w2, self.b2]
        return self.kan1.parameters() + self.kan2.parameters()


class _Student:
    """Graph-free two-layer network over raw features (mlp or kan)."""

    def __init__(self, spec: ModelSpec, rng):
        self.spec = spec
        if spec.arch == "mlp":
            self.w1, self.b1 = _linear(rng, spec.in_dim, spec.hidden, "l1")
            self.w2, self.b2 = _linear(rng, spec.hidden, spec.n_classes, "l2")
        else:
            grid = SplineGrid(size=spec.grid_size, order=spec.spline_order)
            self.kan1 = kan_init(spec.in_dim, spec.hidden, grid, _child_seed(rng), "l1.kan")
            self.kan2 = kan_init(spec.hidden, spec.n_classes, grid, _child_seed(rng), "l2.kan")

    def forward(self, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
        h = _dropout(x, self.spec.dropout, train, rng)
        if self.spec.arch == "mlp":
            h = dc.relu(dc.add(dc.matmul(h, self.w1), self.b1))
            h = _dropout(h, self.spec.dropout, train, rng)
            return dc.add(dc.matmul(h, self.w2), self.b2)
        h = self.kan1.forward(h)
        h = _dropout(h, self.spec.dropout, train, rng)
        return self.kan2.forward(h)

    def parameters(self):
        if self.spec.arch == "mlp":
            return [self.w1, self.b1, self.w2, self.b2]
        return self.kan1.parameters() + self.kan2.parameters()


_FAMILIES = {
    "gcn": _GcnFamily, "kgcn1": _GcnFamily, "kgcn2": _GcnFamily,
    "gat": _GatFamily, "kgat1": _GatFamily, "kgat2": _GatFamily,
    "sgc": _SgcFamily, "ksgc": _SgcFamily,
    "appnp": _AppnpFamily, "kappnp": _AppnpFamily,
    "mlp": _Student, "kan": _Student,
}


def build_model(spec: ModelSpec):
    """Seeded, deterministic construction of any of the twelve architectures."""
    rng = np.random.default_rng(spec.seed)
    model = _FAMILIES[spec.arch](spec, rng)
    names = [p.name for p in model.parameters()]
    assert len(names) == len(set(names)), "parameter names must be unique"
    return model


def model_forward(model, av, x: Tensor, train: bool = False, rng=None) -> Tensor:
    """Raw logits (n x C); dropout is active only when train is set."""
    if train and model.spec.dropout > 0.0 and rng is None:
        raise ModelError("training-mode forward needs an rng for dropout")
    if model.spec.arch not in GRAPH_FREE and av is None:
        raise ModelError(f"{model.spec.arch} needs a normalized adjacency")
    return model.forward(av, x, train, rng)


def predict(model, av, x: Tensor) -> np.ndarray:
    """Class ids by row-wise argmax; ties go to the smallest class id."""
    logits = model_forward(model, av, x, train=False)
    return np.argmax(logits.data, axis=1)
