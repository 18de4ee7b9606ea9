"""Kolmogorov-Arnold layers: B-spline bases and learnable per-edge functions.

A layer maps n x d_in to n x d_out through a matrix of univariate functions
phi[j][i](x) = base_w[j][i] * silu(x) + sum_m coeffs[j][i][m] * B_m(x),
where B_m are B-spline basis functions on a fixed uniform grid. Basis
evaluation exploits locality (at most order+1 active functions per point)
and treats exact zeros in the input as a shared baseline, so sparse
feature matrices stay cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffcore as dc
from .diffcore import Parameter, Tensor


@dataclass(frozen=True)
class SplineGrid:
    """Uniform knot grid on [lo, hi], extended by `order` knots each side."""

    lo: float = -1.0
    hi: float = 1.0
    size: int = 32
    order: int = 3
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"spline grid needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.size < 1 or self.order < 0:
            raise ValueError("spline grid needs size >= 1 and order >= 0")
        h = (self.hi - self.lo) / self.size
        idx = np.arange(-self.order, self.size + self.order + 1)
        object.__setattr__(self, "knots", self.lo + idx * h)

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / self.size

    @property
    def n_basis(self) -> int:
        return self.size + self.order


def _basis_compact(grid: SplineGrid, x: np.ndarray):
    """Nonzero basis values at each point via the Cox-de Boor recursion.

    Points outside [lo, hi] are clamped before evaluation. Returns
    (values, offsets): values[..., r] is basis function offsets[...]+r,
    r = 0..order, all other basis functions vanish at that point.
    """
    x = np.asarray(x, dtype=np.float64)
    k = grid.order
    xc = np.clip(x, grid.lo, grid.hi)
    j = np.clip(((xc - grid.lo) // grid.step).astype(np.int64), 0, grid.size - 1)
    m = j + k  # knot-span index: knots[m] <= x < knots[m+1]
    t = grid.knots

    vals = np.zeros(x.shape + (k + 1,))
    vals[..., 0] = 1.0
    left = np.zeros(x.shape + (k + 1,))
    right = np.zeros(x.shape + (k + 1,))
    for d in range(1, k + 1):
        left[..., d] = xc - t[m + 1 - d]
        right[..., d] = t[m + d] - xc
        saved = np.zeros(x.shape)
        for r in range(d):
            tmp = vals[..., r] / (right[..., r + 1] + left[..., d - r])
            vals[..., r] = saved + right[..., r + 1] * tmp
            saved = left[..., d - r] * tmp
        vals[..., d] = saved
    return vals, j


def _basis_and_deriv_compact(grid: SplineGrid, x: np.ndarray):
    """Compact basis values plus d/dx, zero outside the clamped domain."""
    x = np.asarray(x, dtype=np.float64)
    k = grid.order
    vals, j = _basis_compact(grid, x)
    if k == 0:
        return vals, np.zeros_like(vals), j

    # Order k-1 values at the same spans, padded: B'_{i,k} = (B_{i,k-1} - B_{i+1,k-1}) / step
    # for uniform knots.
    xc = np.clip(x, grid.lo, grid.hi)
    m = j + k
    t = grid.knots
    low = np.zeros(x.shape + (k,))
    low[..., 0] = 1.0
    for d in range(1, k):
        saved = np.zeros(x.shape)
        for r in range(d):
            left = xc - t[m + 1 - (d - r)]
            right = t[m + r + 1] - xc
            tmp = low[..., r] / (right + left)
            low[..., r] = saved + right * tmp
            saved = left * tmp
        low[..., d] = saved
    # low[..., r] is B_{j+1+r, k-1}; pad with zeros at both ends.
    padded = np.zeros(x.shape + (k + 2,))
    padded[..., 1 : k + 1] = low
    deriv = (padded[..., :-1] - padded[..., 1:]) / grid.step
    deriv[np.asarray(x) != xc] = 0.0  # clamped points: zero slope
    return vals, deriv, j


def bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Full vector of the grid's size+order basis values at a scalar point."""
    vals, j = _basis_compact(grid, np.asarray([x]))
    out = np.zeros(grid.n_basis)
    out[j[0] : j[0] + grid.order + 1] = vals[0]
    return out


def _scatter_full(grid: SplineGrid, vals: np.ndarray, offs: np.ndarray) -> np.ndarray:
    """Expand compact basis rows (npts, order+1) to dense (npts, n_basis)."""
    npts = vals.shape[0]
    out = np.zeros((npts, grid.n_basis))
    cols = offs[:, None] + np.arange(grid.order + 1)[None, :]
    out[np.arange(npts)[:, None], cols] = vals
    return out


def spline_mix(h: Tensor, coeffs: Tensor, grid: SplineGrid) -> Tensor:
    """Differentiable spline path: out[r,j] = sum_i <coeffs[j, i*M:], B(h[r,i])>.

    coeffs has shape (d_out, d_in * n_basis). Entries of h that are exactly
    zero share one precomputed basis row, so only nonzero entries pay for
    basis evaluation and sparse mixing.
    """
    n, d_in = h.shape
    M = grid.n_basis
    k = grid.order
    d_out = coeffs.shape[0]
    if coeffs.shape[1] != d_in * M:
        raise dc.ShapeError(
            f"spline_mix: coeffs {coeffs.shape} do not match input dim {d_in} "
            f"with {M} basis functions"
        )
    X = h.data
    C3 = coeffs.data.reshape(d_out, d_in, M)

    v0, d0, j0 = _basis_and_deriv_compact(grid, np.zeros(1))
    v0, d0, off0 = v0[0], d0[0], int(j0[0])

    nz_r, nz_i = np.nonzero(X)
    nnz = nz_r.size
    if nnz:
        vals, deriv, offs = _basis_and_deriv_compact(grid, X[nz_r, nz_i])
        span = np.arange(k + 1)
        rows = np.repeat(nz_r, k + 1)
        cols_x = (nz_i[:, None] * M + offs[:, None] + span[None, :]).ravel()
        cols_0 = (nz_i[:, None] * M + off0 + span[None, :]).ravel()
        delta = sp.csr_matrix(
            (
                np.concatenate([vals.ravel(), np.tile(-v0, nnz)]),
                (np.concatenate([rows, rows]), np.concatenate([cols_x, cols_0])),
            ),
            shape=(n, d_in * M),
        )
    else:
        vals = deriv = offs = None
        delta = None

    base_row = np.einsum("oit,t->o", C3[:, :, off0 : off0 + k + 1], v0)
    out = np.tile(base_row, (n, 1))
    if delta is not None:
        out += delta @ coeffs.data.T

    def backward(g):
        gh = gc = None
        if coeffs.requires_grad:
            dC = np.zeros((d_out, d_in, M))
            dC[:, :, off0 : off0 + k + 1] = g.sum(axis=0)[:, None, None] * v0
            if delta is not None:
                dC += (delta.T @ g).T.reshape(d_out, d_in, M)
            gc = dC.reshape(d_out, d_in * M)
        if h.requires_grad:
            # All entries get the zero-point slope, nonzeros get corrected.
            K0 = np.einsum("oit,t->oi", C3[:, :, off0 : off0 + k + 1], d0)
            gh = g @ K0
            if nnz:
                g_nz = g[nz_r]  # (nnz, d_out)
                cols = offs[:, None] + np.arange(k + 1)[None, :]
                Cg = C3[:, nz_i[:, None], cols]  # (d_out, nnz, k+1)
                w_act = np.einsum("no,ont->nt", g_nz, Cg)
                corr = (deriv * w_act).sum(axis=1)
                corr -= np.einsum("no,on->n", g_nz, K0[:, nz_i])
                gh[nz_r, nz_i] += corr
        return gh, gc

    return dc.apply_op("spline_mix", (h, coeffs), out, backward)


class KanLayer:
    """One learnable function matrix mapping d_in features to d_out."""

    def __init__(self, coeffs: Parameter, base_w: Parameter, grid: SplineGrid):
        self.grid = grid
        self.coeffs = coeffs
        self.base_w = base_w
        self.out_dim, self.in_dim = base_w.shape
        if coeffs.shape != (self.out_dim, self.in_dim * grid.n_basis):
            raise dc.ShapeError(
                f"KanLayer: coeffs {coeffs.shape} inconsistent with base "
                f"weights {base_w.shape} and {grid.n_basis} basis functions"
            )

    def forward(self, h: Tensor) -> Tensor:
        if h.shape[1] != self.in_dim:
            raise dc.ShapeError(
                f"KanLayer: input has {h.shape[1]} features, layer expects {self.in_dim}"
            )
        spline = spline_mix(h, self.coeffs, self.grid)
        base = dc.matmul(dc.silu(h), dc.transpose(self.base_w))
        return dc.add(spline, base)

    def parameters(self) -> list[Parameter]:
        return [self.coeffs, self.base_w]


def kan_init(d_in: int, d_out: int, grid: SplineGrid, seed: int, name: str = "kan") -> KanLayer:
    """Seeded layer init: Glorot-uniform base weights, N(0, 0.1/sqrt(G)) splines."""
    if d_in < 1 or d_out < 1:
        raise ValueError(f"kan_init: dims must be >= 1, got {d_in} -> {d_out}")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (d_in + d_out))
    base = rng.uniform(-bound, bound, size=(d_out, d_in))
    sigma = 0.1 / np.sqrt(grid.size)
    coeffs = rng.normal(0.0, sigma, size=(d_out, d_in * grid.n_basis))
    return KanLayer(
        Parameter(coeffs, f"{name}.coeffs"),
        Parameter(base, f"{name}.base_w"),
        grid,
    )


class KanStack:
    """Chained KAN layers; adjacent dimensions must match."""

    def __init__(self, layers: list[KanLayer]):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise dc.ShapeError(
                    f"KanStack: layer output {a.out_dim} does not feed input {b.in_dim}"
                )
        self.layers = layers

    def forward(self, h: Tensor) -> Tensor:
        for layer in self.layers:
            h = layer.forward(h)
        return h

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]
