"""Numerical check of the weighted parabolic inequalities behind the stability estimate.

For the operator ``L u = u_t - s alpha Lap u`` (``s = +1`` forward, ``s = -1``
backward) and the weight ``psi`` the inequality reads

    int (L u)^2 psi >= C [ (1/lam) int u_t^2 psi + (1/lam) int |D^2 u|^2 psi
                          + int (lam |grad u|^2 + lam^3 u^2) psi
                          - boundary - endpoint ]

with boundary term ``(|d_nu u|^2_{H^{1,0}(S)} + |u|^2_{H^{2,1}(S)}) e^{3 lam b^2}``
and endpoint term ``(|u(T)|^2_{H^1} + |u(0)|^2_{H^1}) exp(-2 lam (c^2 T^2/4 - b^2))``.
All integrals are trapezoidal sums of the discrete operators. With
normalization every term is divided by ``exp(2 lam b^2)``; the ratio
``lhs / D`` is unaffected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cwf import CarlemanParams, cwf_grid, weight_scale
from .fields import ScalarField, lateral_sq_norm, slice_h1_norm, trace_vectors
from .grid import Grid
from .ops import grid_operators

logger = logging.getLogger(__name__)

FORWARD = "3.1"  # u_t - alpha Lap u
BACKWARD = "3.2"  # u_t + alpha Lap u
THEOREM_SIGN = {FORWARD: -1, BACKWARD: +1}
DEFAULT_LAMBDAS = (5.0, 10.0, 20.0, 40.0)


def _weighted_sum(grid: Grid, density: np.ndarray, psi: np.ndarray) -> float:
    return float(np.sum(density * psi * grid.trapezoid_weights.ravel()))


def carleman_lhs(u: ScalarField, sign: int, params: CarlemanParams, normalize: bool = True) -> float:
    """``int (u_t + sign * alpha Lap u)^2 psi`` over the full cylinder."""
    if sign not in (-1, 1):
        raise ValueError("sign must be -1 (u_t - alpha Lap u) or +1 (u_t + alpha Lap u)")
    grid = u.grid
    ops = grid_operators(grid)
    x = u.flat
    res = ops.dt @ x + sign * grid.domain.alpha * (ops.laplacian @ x)
    psi = cwf_grid(grid, params, normalize=normalize).ravel()
    return _weighted_sum(grid, res * res, psi)


@dataclass(frozen=True)
class RhsComponents:
    """The five groups on the right, without the constant.

    ``time`` and ``hessian`` are raw weighted integrals (the ``1/lam``
    factor is applied in :meth:`denominator`); ``lower`` already carries
    its powers of ``lam``; ``boundary`` and ``endpoint`` carry their
    exponential factors.
    """

    time: float
    hessian: float
    lower: float
    boundary: float
    endpoint: float
    lam: float

    def volume_groups(self) -> tuple[float, float, float]:
        return self.time / self.lam, self.hessian / self.lam, self.lower

    def denominator(self) -> float:
        return sum(self.volume_groups()) - self.boundary - self.endpoint


def carleman_rhs_components(u: ScalarField, params: CarlemanParams, normalize: bool = True) -> RhsComponents:
    grid = u.grid
    ops = grid_operators(grid)
    lam = params.lam
    x = u.flat
    psi = cwf_grid(grid, params, normalize=normalize).ravel()
    time = _weighted_sum(grid, (ops.dt @ x) ** 2, psi)
    hess = sum(_weighted_sum(grid, (mat @ x) ** 2, psi) for _, mat in ops.hessian_pairs())
    grad_sq = sum(_weighted_sum(grid, (d @ x) ** 2, psi) for d in ops.dx)
    lower = lam * grad_sq + lam**3 * _weighted_sum(grid, x * x, psi)

    shift = weight_scale(params, normalize)
    tv = trace_vectors(x, np.zeros_like(x), grid)
    lateral = lateral_sq_norm(grid, tv["g1"], "h10") + lateral_sq_norm(grid, tv["g0"], "h21")
    boundary = lateral * math.exp(3.0 * lam * params.b**2 - shift) if lateral > 0 else 0.0
    ends = slice_h1_norm(u, grid.nt - 1) ** 2 + slice_h1_norm(u, 0) ** 2
    endpoint = ends * math.exp(-2.0 * lam * params.endpoint_margin - shift) if ends > 0 else 0.0
    return RhsComponents(time, hess, lower, boundary, endpoint, lam)


@dataclass
class CarlemanCell:
    member: int
    lam: float
    lhs: float
    time: float
    hessian: float
    lower: float
    boundary_deficit: float
    endpoint_deficit: float
    denominator: float
    ratio: float | None
    skipped: bool

    def row(self) -> dict:
        return asdict(self)


@dataclass
class CarlemanReport:
    theorem: str
    lambda_grid: list
    cells: list
    C_star: float | None
    lambda0_estimate: float | None
    endpoint_valid: bool
    family_size: int
    params: dict = field(default_factory=dict)

    def ratios(self) -> np.ndarray:
        """``(family, lambda)`` table of ratios, NaN where skipped."""
        table = np.full((self.family_size, len(self.lambda_grid)), np.nan)
        col = {lam: j for j, lam in enumerate(self.lambda_grid)}
        for c in self.cells:
            if c.ratio is not None:
                table[c.member, col[c.lam]] = c.ratio
        return table

    def min_ratio_per_lambda(self) -> list[float]:
        table = self.ratios()
        return [float(np.nanmin(col)) if np.any(np.isfinite(col)) else float("nan") for col in table.T]

    def min_ratio_spread(self) -> float:
        """max / min of the family-minimum ratio over the lambda grid."""
        mins = np.asarray(self.min_ratio_per_lambda())
        if np.any(~np.isfinite(mins)) or np.any(mins <= 0):
            return float("inf")
        return float(mins.max() / mins.min())

    def positive_beyond_lambda0(self) -> bool:
        if self.lambda0_estimate is None:
            return False
        return all(
            c.ratio is not None and c.ratio > 0
            for c in self.cells
            if c.lam >= self.lambda0_estimate and not c.skipped
        )

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "lambda_grid": list(self.lambda_grid),
            "C_star": self.C_star,
            "lambda0_estimate": self.lambda0_estimate,
            "endpoint_valid": self.endpoint_valid,
            "family_size": self.family_size,
            "min_ratio_per_lambda": self.min_ratio_per_lambda(),
            "min_ratio_spread": self.min_ratio_spread(),
            "params": self.params,
            "cells": [c.row() for c in self.cells],
        }


def _estimate_lambda0(table: np.ndarray, lambda_grid) -> float | None:
    """Smallest grid lambda from which every member has D > 0, r > 0 and r non-decreasing."""
    n_lam = table.shape[1]
    for k in range(n_lam):
        block = table[:, k:]
        usable = np.isfinite(block).all(axis=1) | np.all(np.isnan(block), axis=1)
        if not usable.all():
            continue
        live = block[np.isfinite(block).all(axis=1)]
        if live.size == 0:
            continue
        if np.any(live <= 0):
            continue
        if live.shape[1] > 1 and np.any(np.diff(live, axis=1) < 0):
            continue
        return float(lambda_grid[k])
    return None


def verify_estimate(
    theorem: str,
    family: list[ScalarField],
    lambda_grid=DEFAULT_LAMBDAS,
    eps: float | None = None,
    c2: float | None = None,
    normalize: bool = True,
) -> CarlemanReport:
    """Tabulate ``r = lhs / D`` over a family and a lambda grid and fit ``C`` and ``lambda_0``.

    Members with ``D <= 0`` (including the zero field) are recorded as skipped.
    """
    if theorem not in THEOREM_SIGN:
        raise ValueError(f"theorem must be one of {sorted(THEOREM_SIGN)}, got {theorem!r}")
    if not family:
        raise ValueError("empty test family")
    grid = family[0].grid
    for f in family[1:]:
        if f.grid != grid:
            raise ValueError("test family lives on mismatched grids")
    lambda_grid = [float(lam) for lam in lambda_grid]
    eps = grid.T / 8.0 if eps is None else eps
    base = CarlemanParams.from_domain(grid.domain, lambda_grid[0], eps, c2=c2)
    if not base.endpoint_valid:
        logger.warning("c^2 T^2/4 <= b^2: the endpoint term grows with lambda")
    sign = THEOREM_SIGN[theorem]
    cells = []
    for lam in lambda_grid:
        params = base.with_lambda(lam)
        for i, u in enumerate(family):
            lhs = carleman_lhs(u, sign, params, normalize)
            comp = carleman_rhs_components(u, params, normalize)
            D = comp.denominator()
            t_g, h_g, l_g = comp.volume_groups()
            ok = D > 0
            cells.append(
                CarlemanCell(
                    member=i,
                    lam=lam,
                    lhs=lhs,
                    time=t_g,
                    hessian=h_g,
                    lower=l_g,
                    boundary_deficit=comp.boundary,
                    endpoint_deficit=comp.endpoint,
                    denominator=D,
                    ratio=lhs / D if ok else None,
                    skipped=not ok,
                )
            )
    report = CarlemanReport(
        theorem=theorem,
        lambda_grid=lambda_grid,
        cells=cells,
        C_star=None,
        lambda0_estimate=None,
        endpoint_valid=base.endpoint_valid,
        family_size=len(family),
        params={"c2": base.c2, "eps": eps, "alpha": grid.domain.alpha, "normalize": normalize, "grid": list(grid.shape)},
    )
    table = report.ratios()
    lam0 = _estimate_lambda0(table, lambda_grid)
    report.lambda0_estimate = lam0
    if lam0 is not None:
        cols = [j for j, lam in enumerate(lambda_grid) if lam >= lam0]
        vals = table[:, cols]
        if np.any(np.isfinite(vals)):
            report.C_star = float(np.nanmin(vals))
    return report


def reversal_mismatch(a: CarlemanReport, b: CarlemanReport) -> float:
    """Largest relative difference between matching cells of two reports."""
    if len(a.cells) != len(b.cells):
        raise ValueError("reports differ in size")
    worst = 0.0
    for ca, cb in zip(a.cells, b.cells):
        for name in ("lhs", "time", "hessian", "lower", "boundary_deficit", "endpoint_deficit", "denominator"):
            va, vb = getattr(ca, name), getattr(cb, name)
            scale = max(abs(va), abs(vb))
            if scale > 0:
                worst = max(worst, abs(va - vb) / scale)
        if (ca.ratio is None) != (cb.ratio is None):
            return float("inf")
    return worst


# test families -----------------------------------------------------------


def _unit_coords(grid: Grid):
    t, *xs = grid.mesh()
    d = grid.domain
    out = [t / d.T, (xs[0] - d.a) / (d.b - d.a)]
    if grid.n == 2:
        a2 = d.a_i[0]
        out.append((xs[1] + a2) / (2.0 * a2))
    return out


def bump(s: np.ndarray, margin: float, power: int) -> np.ndarray:
    """``(4 (s-lo)(hi-s) / (hi-lo)^2)^power`` on ``(lo, hi) = (margin, 1-margin)``, zero outside."""
    lo, hi = margin, 1.0 - margin
    inside = (s > lo) & (s < hi)
    val = np.where(inside, 4.0 * (s - lo) * (hi - s) / (hi - lo) ** 2, 0.0)
    return val**power


def interior_family(
    grid: Grid, size: int = 24, seed: int = 0, margin: float = 0.1, power: int = 4
) -> list[ScalarField]:
    """Smooth fields supported strictly inside the cylinder.

    The first members are deterministic polynomial and trigonometric factors
    times a tensor bump; the rest are seeded random trigonometric sums times
    the same bump. Every member vanishes with ``power - 1`` derivatives at a
    distance ``margin`` (in unit coordinates) from the lateral boundary and
    from both time ends. On coarse grids the spatial margin widens to 2.5
    cells so the one-sided normal-derivative stencil sees only zeros.
    """
    coords = _unit_coords(grid)
    tau, xi = coords[0], coords[1]
    counts = (grid.nt, grid.nx1, *grid.nxi)
    env = np.ones(grid.shape)
    for axis, (s, n) in enumerate(zip(coords, counts)):
        m = margin if axis == 0 else max(margin, 2.5 / (n - 1))
        env = env * bump(s, m, power)
    eta = coords[2] if grid.n == 2 else np.zeros(grid.shape)
    fixed = [
        np.ones(grid.shape),
        xi,
        1.0 - xi,
        tau,
        xi * tau,
        xi**2,
        np.sin(np.pi * xi),
        np.cos(np.pi * xi),
        np.sin(2 * np.pi * xi),
        np.cos(2 * np.pi * tau),
        np.sin(np.pi * (xi + tau)),
        np.cos(3 * np.pi * xi) * np.sin(np.pi * tau),
    ]
    if grid.n == 2:
        fixed += [np.cos(np.pi * eta), np.sin(2 * np.pi * eta) * xi]
    members = [ScalarField(grid, env * f) for f in fixed[:size]]
    rng = np.random.default_rng(seed)
    while len(members) < size:
        f = np.zeros(grid.shape)
        for j in range(3):
            for k in range(3):
                for l in range(3 if grid.n == 2 else 1):
                    c = rng.standard_normal() / (1.0 + j + k + l)
                    ph = rng.uniform(0, 2 * np.pi, 3)
                    f += c * np.cos(np.pi * j * xi + ph[0]) * np.cos(np.pi * k * tau + ph[1]) * np.cos(np.pi * l * eta + ph[2])
        members.append(ScalarField(grid, env * f))
    return members


def boundary_family(grid: Grid, size: int = 6, seed: int = 1) -> list[ScalarField]:
    """Smooth fields with nonzero lateral traces, vanishing only near both time ends."""
    coords = _unit_coords(grid)
    tau, xi = coords[0], coords[1]
    env = bump(tau, 0.1, 4)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(size):
        c = rng.standard_normal(4)
        out.append(ScalarField(grid, env * (c[0] + c[1] * xi + c[2] * np.cos(np.pi * xi) + c[3] * xi * tau)))
    return out
