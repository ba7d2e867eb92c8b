"""Rectangular prism domains and uniform space-time grids.

Arrays living on a grid are shaped ``(nt, nx1)`` for ``n == 1`` and
``(nt, nx1, nx2)`` for ``n == 2``; time is always axis 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

MIN_NODES = 4


@dataclass(frozen=True)
class DomainSpec:
    """The prism ``(a, b) x prod(-a_i, a_i)`` times ``(0, T)``."""

    n: int
    a: float
    b: float
    T: float
    alpha: float = 1.0
    a_i: tuple[float, ...] = ()

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.n}")
        if not 0 < self.a < self.b:
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")
        if self.T <= 0:
            raise ValueError(f"time horizon must be positive, got {self.T}")
        if self.alpha <= 0:
            raise ValueError(f"diffusion coefficient must be positive, got {self.alpha}")
        object.__setattr__(self, "a_i", tuple(float(v) for v in self.a_i))
        if len(self.a_i) != self.n - 1:
            raise ValueError(f"expected {self.n - 1} transverse half-widths, got {len(self.a_i)}")
        if any(v <= 0 for v in self.a_i):
            raise ValueError("transverse half-widths must be positive")

    @property
    def cross_section_measure(self) -> float:
        """Measure of the transverse cross-section (1 when n == 1)."""
        return float(np.prod([2.0 * v for v in self.a_i])) if self.a_i else 1.0


@dataclass(frozen=True)
class Face:
    """One lateral face of the prism, times (0, T).

    ``spatial_index`` holds flat indices into the spatial grid (C order) of
    the nodes owned by this face, ordered along ``tangential_axis``.
    """

    label: str
    axis: int  # 1-based spatial axis of the outward normal
    side: int  # +1 for the upper face, -1 for the lower one
    spatial_index: np.ndarray = field(compare=False, repr=False)
    tangential_coords: np.ndarray = field(compare=False, repr=False)
    tangential_weights: np.ndarray = field(compare=False, repr=False)
    tangential_spacing: float = 0.0

    @property
    def n_tangential(self) -> int:
        return len(self.spatial_index)


@dataclass(frozen=True)
class Grid:
    domain: DomainSpec
    nx1: int
    nt: int
    nxi: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nxi", tuple(int(v) for v in self.nxi))
        if len(self.nxi) != self.domain.n - 1:
            raise ValueError(f"expected {self.domain.n - 1} transverse node counts, got {len(self.nxi)}")
        for count in (self.nx1, self.nt, *self.nxi):
            if count < MIN_NODES:
                raise ValueError(f"node counts must be >= {MIN_NODES}, got {count}")

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def T(self) -> float:
        return self.domain.T

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.nx1, *self.nxi)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nt, *self.spatial_shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def hx1(self) -> float:
        return (self.domain.b - self.domain.a) / (self.nx1 - 1)

    @property
    def hxi(self) -> tuple[float, ...]:
        return tuple(2.0 * ai / (ni - 1) for ai, ni in zip(self.domain.a_i, self.nxi))

    @property
    def ht(self) -> float:
        return self.domain.T / (self.nt - 1)

    @property
    def spacings(self) -> tuple[float, ...]:
        """Spacings along (x1, x2, ...)."""
        return (self.hx1, *self.hxi)

    @cached_property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.domain.T, self.nt)

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        """1-D coordinate arrays along (x1, x2, ...)."""
        x1 = np.linspace(self.domain.a, self.domain.b, self.nx1)
        rest = [np.linspace(-ai, ai, ni) for ai, ni in zip(self.domain.a_i, self.nxi)]
        return (x1, *rest)

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Broadcast coordinate arrays ``(t, x1, x2, ...)`` with the full grid shape."""
        return tuple(np.meshgrid(self.t, *self.axes, indexing="ij"))

    def spatial_mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Tensor-product trapezoidal quadrature weights over the closed cylinder."""
        w = _trapz_weights(self.nt, self.ht)
        for n_ax, h in zip(self.spatial_shape, self.spacings):
            w = np.multiply.outer(w, _trapz_weights(n_ax, h))
        return w

    @cached_property
    def spatial_weights(self) -> np.ndarray:
        w = np.ones(())
        for n_ax, h in zip(self.spatial_shape, self.spacings):
            w = np.multiply.outer(w, _trapz_weights(n_ax, h))
        return w

    @property
    def cell_volume(self) -> float:
        return float(self.ht * np.prod(self.spacings))

    @cached_property
    def faces(self) -> dict[str, Face]:
        return _build_faces(self)

    def lateral_mask(self) -> np.ndarray:
        """Boolean mask over the spatial grid of lateral boundary nodes."""
        mask = np.zeros(self.spatial_shape, dtype=bool)
        mask[0] = mask[-1] = True
        if self.n == 2:
            mask[:, 0] = mask[:, -1] = True
        return mask


def _trapz_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _build_faces(grid: Grid) -> dict[str, Face]:
    shape = grid.spatial_shape
    faces = {}
    if grid.n == 1:
        for label, side, idx in (("x1-", -1, 0), ("x1+", 1, grid.nx1 - 1)):
            faces[label] = Face(label, 1, side, np.array([idx]), np.zeros(0), np.ones(1), 0.0)
        return faces

    nx1, nx2 = shape
    x2 = grid.axes[1]
    h1, h2 = grid.spacings
    # x1 faces own the edges; x2 faces take only the interior x1 nodes.
    for label, side, i1 in (("x1-", -1, 0), ("x1+", 1, nx1 - 1)):
        idx = np.ravel_multi_index((np.full(nx2, i1), np.arange(nx2)), shape)
        faces[label] = Face(label, 1, side, idx, x2.copy(), _trapz_weights(nx2, h2), h2)
    inner = np.arange(1, nx1 - 1)
    x1_inner = grid.axes[0][1:-1]
    for label, side, i2 in (("x2-", -1, 0), ("x2+", 1, nx2 - 1)):
        idx = np.ravel_multi_index((inner, np.full(len(inner), i2)), shape)
        faces[label] = Face(label, 2, side, idx, x1_inner.copy(), np.full(len(inner), h1), h1)
    return faces


def build_grid(spec: DomainSpec, nx1: int, nt: int, nxi: tuple[int, ...] | int = ()) -> Grid:
    """Uniform tensor-product grid over the closed cylinder."""
    if isinstance(nxi, int):
        nxi = (nxi,)
    return Grid(spec, int(nx1), int(nt), tuple(nxi))


def shrink_cylinder(grid: Grid, eps: float) -> np.ndarray:
    """Boolean mask over the full grid for nodes with ``eps < t < T - eps``.

    Grid times within round-off of ``eps`` or ``T - eps`` count as on the
    boundary and are excluded.
    """
    T = grid.T
    if not 0 < eps < T / 2:
        raise ValueError(f"eps must lie in (0, T/2) = (0, {T / 2}), got {eps}")
    tol = 1e-9 * grid.ht
    t = grid.t
    inside = (t > eps + tol) & (t < T - eps - tol)
    mask = np.zeros(grid.shape, dtype=bool)
    mask[inside] = True
    return mask
