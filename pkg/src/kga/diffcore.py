"""Reverse-mode automatic differentiation over dense rank-2 float64 arrays.

Every trainable module in this package builds its forward pass from the
primitives below. Each primitive records a node on an implicit tape
(a DAG of TapeNode objects hanging off the output tensors); backward()
replays the tape in reverse topological order exactly once.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not conform to a primitive's rule."""


class NumericError(ArithmeticError):
    """A primitive produced NaN or Inf, or the tape was reused."""


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"tensors are rank <= 2, got shape {arr.shape}")
    return arr


class TapeNode:
    """One recorded primitive: op name, parent tensors, local gradient rule."""

    __slots__ = ("op", "parents", "backward_fn", "used")

    def __init__(self, op, parents, backward_fn):
        self.op = op
        self.parents = parents
        self.backward_fn = backward_fn
        self.used = False


class Tensor:
    """Dense (rows, cols) float64 matrix, optionally attached to the tape."""

    __slots__ = ("data", "node", "requires_grad")

    def __init__(self, data, node=None, requires_grad=False):
        self.data = _as_matrix(data)
        self.node = node
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Small amount of sugar; everything routes through the primitives.
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    __rmul__ = __mul__


class Parameter(Tensor):
    """Leaf tensor with an accumulated gradient buffer and a unique name."""

    __slots__ = ("grad", "name")

    def __init__(self, data, name: str):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name

    def zero_grad(self):
        self.grad[:] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(data) -> Tensor:
    """Wrap raw data as a tape-free tensor (no gradient flows into it)."""
    return Tensor(data)


def apply_op(op: str, parents, out_data: np.ndarray, backward_fn) -> Tensor:
    """Record one primitive on the tape and finite-check its output.

    backward_fn(out_grad) must return one gradient array (or None) per
    parent, aligned with `parents`. Exposed so modules can register their
    own differentiable kernels (sparse matmul, spline mixing).
    """
    if not np.all(np.isfinite(out_data)):
        raise NumericError(f"{op}: non-finite values in output")
    rg = any(p.requires_grad for p in parents)
    node = TapeNode(op, tuple(parents), backward_fn) if rg else None
    return Tensor(out_data, node=node, requires_grad=rg)


# ---------------------------------------------------------------------------
# primitives

def _broadcast_check(op, a, b):
    ra, ca = a.shape
    rb, cb = b.shape
    ok = (ra == rb or ra == 1 or rb == 1) and (ca == cb or ca == 1 or cb == 1)
    if not ok:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    out = grad
    if shape[0] == 1 and grad.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = a.data @ b.data

    def backward(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return apply_op("matmul", (a, b), out, backward)


def transpose(a: Tensor) -> Tensor:
    return apply_op("transpose", (a,), a.data.T.copy(), lambda g: (g.T,))


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    out = a.data + b.data

    def backward(g):
        ga = _unbroadcast(g, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g, b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("add", (a, b), out, backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("hadamard", a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return apply_op("hadamard", (a, b), out, backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("div", a, b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return apply_op("div", (a, b), out, backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return apply_op("scale", (a,), a.data * c, lambda g: (g * c,))


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise concatenation [a || b] along the feature axis."""
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts differ, {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    ca = a.shape[1]

    def backward(g):
        ga = g[:, :ca] if a.requires_grad else None
        gb = g[:, ca:] if b.requires_grad else None
        return ga, gb

    return apply_op("concat_cols", (a, b), out, backward)


def row_softmax(a: Tensor) -> Tensor:
    """Softmax over each row, computed with max subtraction."""
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return apply_op("row_softmax", (a,), out, backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    neg = a.data < 0
    out = np.where(neg, slope * a.data, a.data)

    def backward(g):
        return (np.where(neg, slope * g, g),)

    return apply_op("leaky_relu", (a,), out, backward)


def relu(a: Tensor) -> Tensor:
    return leaky_relu(a, slope=0.0)


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    sig = 1.0 / (1.0 + np.exp(-a.data))
    out = a.data * sig

    def backward(g):
        return (g * sig * (1.0 + a.data * (1.0 - sig)),)

    return apply_op("silu", (a,), out, backward)


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return apply_op("exp", (a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return apply_op("log", (a,), out, lambda g: (g / a.data,))


def mean(a: Tensor) -> Tensor:
    inv = 1.0 / a.data.size
    out = np.array([[a.data.mean()]])

    def backward(g):
        return (np.full(a.shape, g[0, 0] * inv),)

    return apply_op("mean", (a,), out, backward)


def tensor_sum(a: Tensor) -> Tensor:
    out = np.array([[a.data.sum()]])

    def backward(g):
        return (np.full(a.shape, g[0, 0]),)

    return apply_op("sum", (a,), out, backward)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Index rows: out[r, :] = a[idx[r], :]."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"gather_rows: index must be 1-D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    out = a.data[idx, :]
    n_rows = a.shape[0]

    def backward(g):
        ga = np.zeros((n_rows, g.shape[1]))
        np.add.at(ga, idx, g)
        return (ga,)

    return apply_op("gather_rows", (a,), out, backward)


def scatter_add_rows(a: Tensor, idx, n_rows: int) -> Tensor:
    """Scatter-add rows: out[idx[r], :] += a[r, :], output has n_rows rows."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != (a.shape[0],):
        raise ShapeError(
            f"scatter_add_rows: index shape {idx.shape} does not match {a.shape[0]} rows"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= n_rows):
        raise ShapeError(f"scatter_add_rows: index out of range for {n_rows} rows")
    out = np.zeros((n_rows, a.shape[1]))
    np.add.at(out, idx, a.data)

    def backward(g):
        return (g[idx, :],)

    return apply_op("scatter_add_rows", (a,), out, backward)


# ---------------------------------------------------------------------------
# backward pass

def _toposort(root: Tensor):
    """Iterative post-order over the tape DAG reachable from root."""
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in visited:
            continue
        visited.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
    return order


def backward(loss: Tensor):
    """Accumulate d(loss)/d(parameter) into every reachable Parameter's grad.

    The tape reachable from `loss` is consumed: calling backward on it a
    second time without rebuilding the forward pass raises NumericError.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward: loss must be scalar, got {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.node is not None and loss.node.used:
        raise NumericError("backward: tape already consumed, rebuild the forward pass")

    order = _toposort(loss)
    grads = {id(loss): np.ones((1, 1))}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if isinstance(t, Parameter):
            t.grad += g
        node = t.node
        if node is None:
            continue
        if node.used:
            raise NumericError(f"backward: node {node.op} already consumed")
        node.used = True
        parent_grads = node.backward_fn(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(
                    f"backward({node.op}): gradient shape {pg.shape} != value shape {p.shape}"
                )
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# gradient checking

class GradCheckReport:
    """Per-parameter max relative error between backward and central differences."""

    def __init__(self, tol: float):
        self.tol = tol
        self.errors: dict[str, float] = {}

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def __repr__(self):
        lines = [f"grad_check tol={self.tol:g} passed={self.passed}"]
        for name, err in sorted(self.errors.items()):
            mark = "ok" if err <= self.tol else "FAIL"
            lines.append(f"  {name}: {err:.3e} {mark}")
        return "\n".join(lines)


def grad_check(fn, params, eps: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare backward() gradients of fn() against central finite differences.

    fn must be a deterministic, scalar-valued closure over `params`.
    Relative error is |a - n| / max(1, |a|, |n|) per entry.
    """
    report = GradCheckReport(tol)
    for p in params:
        p.zero_grad()
    backward(fn())
    analytic = {p.name: p.grad.copy() for p in params}

    for p in params:
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        nflat = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = fn().item()
            flat[i] = orig - eps
            f_minus = fn().item()
            flat[i] = orig
            nflat[i] = (f_plus - f_minus) / (2.0 * eps)
        a = analytic[p.name]
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
        report.errors[p.name] = float(np.max(np.abs(a - num) / denom)) if a.size else 0.0
    return report
