"""Forward solver for the coupled Bellman / Fokker-Planck system.

The Bellman equation is marched backward from its terminal slice and the
Fokker-Planck equation forward from its initial slice. Each step treats
diffusion implicitly and the gradient nonlinearity, interaction and
advection explicitly at the previous marching level. Lateral values are
Dirichlet. The two equations are coupled by damped Picard iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .expr import derivative, lambdify, parse
from .fields import ScalarField
from .grid import Grid

logger = logging.getLogger(__name__)


class BlowUpError(RuntimeError):
    pass


@dataclass
class InteractionSpec:
    """Interaction term ``P(x, t, z1, z2)``, transverse kernel ``G1`` and coefficient ``k``.

    ``z1`` receives the nonlocal integral of ``m`` and ``z2`` the local value
    ``m(x, t)``. Callables take broadcastable arrays: ``P(x1, x2, t, z1, z2)``,
    ``G1(x1, x2, y2)`` and ``k(x1, x2)``; for ``n == 1`` the ``x2``/``y2``
    arguments are zeros and ``G1`` acts as a pointwise multiplier.
    """

    P: object
    P_z1: object
    P_z2: object
    G1: object
    k: object
    R1: float = np.inf
    R2: float = np.inf
    source: dict = field(default_factory=dict)

    @classmethod
    def from_expressions(cls, P: str, G1: str = "0", k: str = "1", R1: float = np.inf, R2: float = np.inf):
        p_expr = parse(P, ("x1", "x2", "t", "z1", "z2"))
        g_expr = parse(G1, ("x1", "x2", "y2"))
        k_expr = parse(k, ("x1", "x2"))
        pvars = ("x1", "x2", "t", "z1", "z2")
        return cls(
            P=lambdify(p_expr, pvars),
            P_z1=lambdify(derivative(p_expr, "z1"), pvars),
            P_z2=lambdify(derivative(p_expr, "z2"), pvars),
            G1=lambdify(g_expr, ("x1", "x2", "y2")),
            k=lambdify(k_expr, ("x1", "x2")),
            R1=R1,
            R2=R2,
            source={"P": P, "G1": G1, "k": k},
        )

    def k2_spatial(self, grid: Grid) -> np.ndarray:
        xs = grid.spatial_mesh()
        x2 = xs[1] if grid.n == 2 else np.zeros_like(xs[0])
        return self.k(xs[0], x2) ** 2

    def kernel_tensor(self, grid: Grid) -> np.ndarray:
        """Quadrature-weighted kernel.

        n == 2: ``K[i1, i2, j] = w_j G1(x1_i1, x2_i2, y2_j)`` (trapezoid in y2).
        n == 1: ``K[i1] = G1(x1_i1)``.
        """
        if grid.n == 1:
            x1 = grid.axes[0]
            return self.G1(x1, np.zeros_like(x1), np.zeros_like(x1))
        x1, x2 = grid.axes
        y2 = x2
        X1, X2, Y2 = np.meshgrid(x1, x2, y2, indexing="ij")
        w = np.full(len(y2), grid.hxi[0])
        w[0] = w[-1] = 0.5 * grid.hxi[0]
        return self.G1(X1, X2, Y2) * w[None, None, :]

    def check_bounds(self, grid: Grid, z_range: float = 5.0, samples: int = 7) -> dict:
        """Sampled sup|G1| and sup|P_z| against R1, R2."""
        K = self.kernel_tensor(grid)
        if grid.n == 2:
            x1, x2 = grid.axes
            X1, X2, Y2 = np.meshgrid(x1, x2, x2, indexing="ij")
            g_sup = float(np.max(np.abs(self.G1(X1, X2, Y2))))
        else:
            g_sup = float(np.max(np.abs(K)))
        t, *xs = grid.mesh()
        x1 = xs[0][::2]
        x2 = xs[1][::2] if grid.n == 2 else np.zeros_like(x1)
        tt = t[::2]
        zs = np.linspace(-z_range, z_range, samples)
        p_sup = 0.0
        for z1 in zs:
            for z2 in zs:
                a = np.abs(self.P_z1(x1, x2, tt, z1, z2))
                b = np.abs(self.P_z2(x1, x2, tt, z1, z2))
                p_sup = max(p_sup, float(a.max()), float(b.max()))
        return {"sup_G1": g_sup, "sup_Pz": p_sup, "G1_ok": g_sup <= self.R1, "Pz_ok": p_sup <= self.R2}


def nonlocal_term(m: np.ndarray, kernel: np.ndarray, grid: Grid) -> np.ndarray:
    """Integral of ``G1(x, y2) m(x1, y2, t)`` over the cross-section.

    ``m`` may be a single time slice or the full cylinder array. For n == 1
    the kernel is a pointwise multiplier.
    """
    m = np.asarray(m, dtype=float)
    if grid.n == 1:
        return kernel * m
    return np.einsum("...aj,abj->...ab", m, kernel)


@dataclass
class MFGSolution:
    u: ScalarField
    m: ScalarField
    picard_iters: int
    final_update_norm: float
    converged: bool
    history: list = field(default_factory=list)


def _k2_midpoints(k2: np.ndarray, axis: int) -> np.ndarray:
    lo = [slice(None)] * k2.ndim
    hi = [slice(None)] * k2.ndim
    lo[axis] = slice(None, -1)
    hi[axis] = slice(1, None)
    return 0.5 * (k2[tuple(lo)] + k2[tuple(hi)])


class _ImplicitDiffusion:
    """2-D solver for ``(I - ht alpha Laplacian) v = rhs`` on interior nodes, Dirichlet on the rest."""

    def __init__(self, grid: Grid, alpha: float, ht: float):
        self.grid = grid
        shape = grid.spatial_shape
        self.r = alpha * ht
        lap = sp.kron(_dirichlet_lap(shape[0], grid.hx1), sp.identity(shape[1])) + sp.kron(
            sp.identity(shape[0]), _dirichlet_lap(shape[1], grid.hxi[0])
        )
        lap = sp.csr_matrix(lap)
        interior = ~grid.lateral_mask().ravel()
        self.interior = interior
        self.L_IB = lap[interior][:, ~interior]
        A = sp.identity(int(interior.sum())) - self.r * lap[interior][:, interior]
        self.lu = spla.splu(sp.csc_matrix(A))

    def solve(self, rhs_full: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        """``rhs_full`` and ``boundary`` are spatial arrays; returns the full new slice."""
        out = boundary.copy()
        flat_rhs = rhs_full.ravel()[self.interior] + self.r * (self.L_IB @ boundary.ravel()[~self.interior])
        vals = out.ravel()
        vals[self.interior] = self.lu.solve(flat_rhs)
        return vals.reshape(out.shape)


def _dirichlet_lap(n: int, h: float) -> sp.csr_matrix:
    # Plain 3-point rows everywhere; boundary rows are discarded by the caller.
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    return sp.csr_matrix(sp.diags([off, main, off], [-1, 0, 1]) / h**2)


def _grad_sq_interior(u: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.zeros_like(u)
    h1, h2 = grid.spacings
    out[1:-1, 1:-1] = ((u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * h1)) ** 2 + ((u[1:-1, 2:] - u[1:-1, :-2]) / (2 * h2)) ** 2
    return out


def _flux_divergence(m: np.ndarray, u: np.ndarray, k2: np.ndarray, grid: Grid) -> np.ndarray:
    """Conservative centered discretisation of div(k^2 m grad u) at interior nodes."""
    out = np.zeros_like(m)
    h1, h2 = grid.spacings
    f1 = _k2_midpoints(k2, 0) * 0.5 * (m[1:, :] + m[:-1, :]) * (u[1:, :] - u[:-1, :]) / h1
    f2 = _k2_midpoints(k2, 1) * 0.5 * (m[:, 1:] + m[:, :-1]) * (u[:, 1:] - u[:, :-1]) / h2
    out[1:-1, 1:-1] = (f1[1:, 1:-1] - f1[:-1, 1:-1]) / h1 + (f2[1:-1, 1:] - f2[1:-1, :-1]) / h2
    return out


def interaction_field(spec: InteractionSpec, m: np.ndarray, grid: Grid, kernel: np.ndarray | None = None):
    """``P(x, t, N[m], m)`` on the full cylinder."""
    if kernel is None:
        kernel = spec.kernel_tensor(grid)
    t, *xs = grid.mesh()
    x2 = xs[1] if grid.n == 2 else np.zeros_like(xs[0])
    z1 = nonlocal_term(m, kernel, grid)
    return spec.P(xs[0], x2, t, z1, m)


def _check_blowup(arr: np.ndarray, bound: float | None, name: str):
    if not np.all(np.isfinite(arr)):
        raise BlowUpError(f"{name}: non-finite values during marching")
    if bound is not None and np.max(np.abs(arr)) > 10.0 * bound:
        raise BlowUpError(f"{name}: |{name}| = {np.max(np.abs(arr)):.3g} exceeds 10 x bound {bound:g}")


def solve_bellman_backward(
    m: ScalarField,
    k2: np.ndarray,
    spec: InteractionSpec,
    u_T: np.ndarray,
    dirichlet: np.ndarray,
    alpha: float,
    source: np.ndarray | None = None,
    bound: float | None = None,
) -> ScalarField:
    """March ``u_t + alpha Lap u + k^2/2 |grad u|^2 + P + source = 0`` backward in time.

    ``dirichlet`` is a full-cylinder array whose lateral nodes supply the
    boundary values; ``u_T`` is the terminal spatial slice.
    """
    grid = m.grid
    explicit = interaction_field(spec, m.values, grid)
    if source is not None:
        explicit = explicit + source
    dirichlet = np.asarray(dirichlet, dtype=float).reshape(grid.shape)
    if grid.n == 1:
        u = _kernels.bellman_march_1d(
            u_T, explicit, k2, dirichlet[:, 0], dirichlet[:, -1], alpha, grid.hx1, grid.ht
        )
        _check_blowup(u, bound, "u")
        return ScalarField(grid, u)
    ht = grid.ht
    solver = _ImplicitDiffusion(grid, alpha, ht)
    u = np.empty(grid.shape)
    u[-1] = u_T
    for n in range(grid.nt - 2, -1, -1):
        rhs = u[n + 1] + ht * (0.5 * k2 * _grad_sq_interior(u[n + 1], grid) + explicit[n + 1])
        u[n] = solver.solve(rhs, dirichlet[n])
        _check_blowup(u[n], bound, "u")
    return ScalarField(grid, u)


def solve_fp_forward(
    u: ScalarField,
    k2: np.ndarray,
    m_0: np.ndarray,
    dirichlet: np.ndarray,
    alpha: float,
    source: np.ndarray | None = None,
    bound: float | None = None,
) -> ScalarField:
    """March ``m_t - alpha Lap m + div(k^2 m grad u) + source = 0`` forward in time."""
    grid = u.grid
    if source is None:
        source = np.zeros(grid.shape)
    dirichlet = np.asarray(dirichlet, dtype=float).reshape(grid.shape)
    if grid.n == 1:
        m = _kernels.fp_march_1d(
            m_0, u.values, _k2_midpoints(k2, 0), source, dirichlet[:, 0], dirichlet[:, -1], alpha, grid.hx1, grid.ht
        )
        _check_blowup(m, bound, "m")
        return ScalarField(grid, m)
    ht = grid.ht
    solver = _ImplicitDiffusion(grid, alpha, ht)
    m = np.empty(grid.shape)
    m[0] = m_0
    for n in range(grid.nt - 1):
        rhs = m[n] - ht * (_flux_divergence(m[n], u.values[n], k2, grid) + source[n])
        m[n + 1] = solver.solve(rhs, dirichlet[n + 1])
        _check_blowup(m[n + 1], bound, "m")
    return ScalarField(grid, m)


@dataclass
class ForwardProblem:
    """Everything the Picard solver needs on one grid."""

    grid: Grid
    spec: InteractionSpec
    u_T: np.ndarray
    m_0: np.ndarray
    u_dirichlet: np.ndarray
    m_dirichlet: np.ndarray
    source_u: np.ndarray | None = None
    source_m: np.ndarray | None = None
    R4: float | None = None
    R5: float | None = None

    @property
    def alpha(self) -> float:
        return self.grid.domain.alpha

    @property
    def k2(self) -> np.ndarray:
        return self.spec.k2_spatial(self.grid)


def picard_solve(
    problem: ForwardProblem,
    theta: float = 0.5,
    tol: float = 1e-10,
    max_iters: int = 200,
    m_init: np.ndarray | None = None,
) -> MFGSolution:
    """Damped fixed-point iteration ``m <- (1 - theta) m + theta FP(Bellman(m))``.

    The update norm is ``max(|u_new - u_old|_inf, |FP(u_new) - m_old|_inf)``;
    the second part is the fixed-point residual, so a zero damping never
    reports convergence. Non-convergence is flagged, not raised.
    """
    grid = problem.grid
    k2 = problem.k2
    if m_init is None:
        m_vals = np.broadcast_to(problem.m_0, grid.shape).copy()
        lat = np.broadcast_to(grid.lateral_mask(), grid.shape)
        m_vals[lat] = problem.m_dirichlet.reshape(grid.shape)[lat]
    else:
        m_vals = np.array(m_init, dtype=float).reshape(grid.shape)
    m = ScalarField(grid, m_vals)
    u = None
    history = []
    update = np.inf
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        u_new = solve_bellman_backward(
            m, k2, problem.spec, problem.u_T, problem.u_dirichlet, problem.alpha, problem.source_u, problem.R4
        )
        m_hat = solve_fp_forward(
            u_new, k2, problem.m_0, problem.m_dirichlet, problem.alpha, problem.source_m, problem.R5
        )
        du = np.inf if u is None else float(np.max(np.abs(u_new.values - u.values)))
        dm = float(np.max(np.abs(m_hat.values - m.values)))
        update = max(du, dm)
        history.append(update)
        u = u_new
        m = ScalarField(grid, (1.0 - theta) * m.values + theta * m_hat.values)
        logger.debug("picard iter %d: update %.3e", it, update)
        if update <= tol:
            converged = True
            break
    if not converged:
        logger.warning("picard iteration did not converge in %d iterations (update %.3e)", it, update)
    return MFGSolution(u, m, it, update, converged, history)
