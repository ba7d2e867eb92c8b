"""Sparse finite-difference matrices on flattened grid arrays.

All matrices act on C-ordered ``values.ravel()`` of a field shaped like
``grid.shape``. Stencils are second order: centered in the interior and
one-sided on the boundary rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .grid import Face, Grid


def d1_matrix(n: int, h: float) -> sp.csr_matrix:
    """First derivative; 3-point one-sided rows at both ends."""
    if n == 1:
        return sp.csr_matrix((1, 1))
    if n == 2:
        return sp.csr_matrix(np.array([[-1.0, 1.0], [-1.0, 1.0]]) / h)
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5, 0.5]
    rows += [0, 0, 0, n - 1, n - 1, n - 1]
    cols += [0, 1, 2, n - 1, n - 2, n - 3]
    vals += [-1.5, 2.0, -0.5, 1.5, -2.0, 0.5]
    return sp.csr_matrix((np.array(vals) / h, (rows, cols)), shape=(n, n))


def d2_matrix(n: int, h: float) -> sp.csr_matrix:
    """Second derivative; 4-point one-sided rows at both ends when n >= 4."""
    if n <= 2:
        return sp.csr_matrix((n, n))
    rows, cols, vals = [], [], []
    for i in range(1, n - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0, -2.0, 1.0]
    if n >= 4:
        end = [2.0, -5.0, 4.0, -1.0]
        rows += [0] * 4 + [n - 1] * 4
        cols += [0, 1, 2, 3] + [n - 1, n - 2, n - 3, n - 4]
        vals += end + end
    else:
        rows += [0] * 3 + [n - 1] * 3
        cols += [0, 1, 2] + [n - 1, n - 2, n - 3]
        vals += [1.0, -2.0, 1.0] * 2
    return sp.csr_matrix((np.array(vals) / h**2, (rows, cols)), shape=(n, n))


def along_axis(op: sp.spmatrix, shape: tuple[int, ...], axis: int) -> sp.csr_matrix:
    """Lift a 1-D operator to act along ``axis`` of a C-ordered array of ``shape``."""
    before = int(np.prod(shape[:axis])) if axis else 1
    after = int(np.prod(shape[axis + 1 :])) if axis + 1 < len(shape) else 1
    out = op
    if after > 1:
        out = sp.kron(out, sp.identity(after, format="csr"), format="csr")
    if before > 1:
        out = sp.kron(sp.identity(before, format="csr"), out, format="csr")
    return sp.csr_matrix(out)


@dataclass(frozen=True)
class GridOperators:
    dt: sp.csr_matrix
    dx: tuple[sp.csr_matrix, ...]
    dxx: dict  # (i, j) with i <= j -> matrix
    laplacian: sp.csr_matrix

    def hessian_pairs(self):
        """All ordered pairs (i, j); off-diagonal entries appear twice."""
        n = len(self.dx)
        for i in range(n):
            for j in range(n):
                yield (i, j), self.dxx[(min(i, j), max(i, j))]


@lru_cache(maxsize=32)
def grid_operators(grid: Grid) -> GridOperators:
    shape = grid.shape
    dt = along_axis(d1_matrix(grid.nt, grid.ht), shape, 0)
    d1s = [d1_matrix(n, h) for n, h in zip(grid.spatial_shape, grid.spacings)]
    dx = tuple(along_axis(d, shape, k + 1) for k, d in enumerate(d1s))
    dxx = {}
    for i, (n, h) in enumerate(zip(grid.spatial_shape, grid.spacings)):
        dxx[(i, i)] = along_axis(d2_matrix(n, h), shape, i + 1)
        for j in range(i + 1, grid.n):
            dxx[(i, j)] = sp.csr_matrix(dx[i] @ dx[j])
    lap = sum(dxx[(i, i)] for i in range(grid.n))
    return GridOperators(dt, dx, dxx, sp.csr_matrix(lap))


@dataclass(frozen=True)
class FaceOperators:
    """Trace and face-norm operators for one lateral face.

    Face arrays are shaped ``(nt, n_tangential)`` and flattened C-order.
    """

    face: Face
    restrict: sp.csr_matrix
    normal: sp.csr_matrix
    weights: np.ndarray  # quadrature weights on face nodes, flattened
    h21: tuple[sp.csr_matrix, ...]  # value, tangential d, tangential d2, time d
    h10: tuple[sp.csr_matrix, ...]  # value, tangential d


@lru_cache(maxsize=32)
def face_operators(grid: Grid) -> dict[str, FaceOperators]:
    out = {}
    nt = grid.nt
    n_space = int(np.prod(grid.spatial_shape))
    for label, face in grid.faces.items():
        ntan = face.n_tangential
        nodes = (np.arange(nt)[:, None] * n_space + face.spatial_index[None, :]).ravel()
        restrict = _selector(nodes, grid.size)
        normal = _normal_derivative(grid, face, nodes)
        weights = np.multiply.outer(_trapz(nt, grid.ht), face.tangential_weights).ravel()
        face_shape = (nt, ntan)
        ident = sp.identity(nt * ntan, format="csr")
        dtf = along_axis(d1_matrix(nt, grid.ht), face_shape, 0)
        if ntan > 1:
            dtan = along_axis(d1_matrix(ntan, face.tangential_spacing), face_shape, 1)
            d2tan = along_axis(d2_matrix(ntan, face.tangential_spacing), face_shape, 1)
            h21 = (ident, dtan, d2tan, dtf)
            h10 = (ident, dtan)
        else:
            h21 = (ident, dtf)
            h10 = (ident,)
        out[label] = FaceOperators(face, restrict, normal, weights, h21, h10)
    return out


def _selector(nodes: np.ndarray, size: int) -> sp.csr_matrix:
    m = len(nodes)
    return sp.csr_matrix((np.ones(m), (np.arange(m), nodes)), shape=(m, size))


def _normal_derivative(grid: Grid, face: Face, nodes: np.ndarray) -> sp.csr_matrix:
    """Outward normal derivative ``(3 f_0 - 4 f_1 + f_2) / (2h)`` stepping inward."""
    shape = grid.shape
    axis = face.axis  # grid axis index (time is 0)
    h = grid.spacings[axis - 1]
    stride = int(np.prod(shape[axis + 1 :])) if axis + 1 < len(shape) else 1
    step = -face.side * stride
    m = len(nodes)
    rows = np.repeat(np.arange(m), 3)
    cols = np.stack([nodes, nodes + step, nodes + 2 * step], axis=1).ravel()
    vals = np.tile(np.array([1.5, -2.0, 0.5]) / h, m)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, grid.size))


def _trapz(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def face_norm_blocks(fop: FaceOperators, kind: str) -> tuple[sp.csr_matrix, ...]:
    if kind == "h21":
        return fop.h21
    if kind == "h10":
        return fop.h10
    raise ValueError(f"unknown lateral norm {kind!r}")
