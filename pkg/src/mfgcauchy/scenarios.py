"""Manufactured scenarios: exact fields, forcing terms, forward problems and Cauchy data.

A scenario pairs closed-form fields ``u*``, ``m*`` with forcing terms chosen
so that the pair solves

    u_t + alpha Lap u + k^2/2 |grad u|^2 + P(x, t, N[m], m) + f_u = 0
    m_t - alpha Lap m + div(k^2 m grad u) + f_m = 0.

The forcing is part of the model: it is known exactly and cancels in the
difference of two solutions, so it does not touch the stability question.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import sympy
from numpy.polynomial.legendre import leggauss

from .expr import SYMBOLS, lambdify, parse
from .fields import CauchyData, ScalarField, extract_traces
from .forward import ForwardProblem, InteractionSpec, interaction_field
from .grid import DomainSpec, Grid, build_grid

_GAUSS_NODES = 48

BUILTIN = {
    "S1": {
        "scenario.name": "S1",
        "domain.n": "1",
        "domain.a": "0.25",
        "domain.b": "0.5",
        "domain.T": "1.0",
        "domain.alpha": "0.1",
        "grid.nx1": "41",
        "grid.nt": "41",
        "interaction.P": "z2",
        "interaction.G1": "0",
        "interaction.k": "0.5 + 0.5*x1",
        "scenario.u": "cos(2*x1 + t) + 0.5*x1^2",
        "scenario.m": "1 + 0.3*sin(3*x1 - t)",
        "bounds.R1": "1",
        "bounds.R2": "1",
        "bounds.R3": "1",
        "bounds.R4": "6",
        "bounds.R5": "2",
    },
    "S2": {
        "scenario.name": "S2",
        "domain.n": "1",
        "domain.a": "0.25",
        "domain.b": "0.5",
        "domain.T": "1.0",
        "domain.alpha": "0.1",
        "grid.nx1": "41",
        "grid.nt": "41",
        "interaction.P": "z2 + tanh(z1)",
        "interaction.G1": "0.5",
        "interaction.k": "0.6",
        "scenario.u": "sin(3*x1 - 0.5*t) + x1*t",
        "scenario.m": "1 + 0.25*cos(4*x1 + t)",
        "bounds.R1": "1",
        "bounds.R2": "2",
        "bounds.R3": "1",
        "bounds.R4": "12",
        "bounds.R5": "2",
    },
    "S3": {
        "scenario.name": "S3",
        "domain.n": "2",
        "domain.a": "0.25",
        "domain.b": "0.5",
        "domain.a2": "0.25",
        "domain.T": "1.0",
        "domain.alpha": "0.1",
        "grid.nx1": "21",
        "grid.nx2": "21",
        "grid.nt": "21",
        "interaction.P": "z2 + 0.5*tanh(z1)",
        "interaction.G1": "cos(x2 - y2)",
        "interaction.k": "0.5",
        "scenario.u": "cos(2*x1 + x2 + t)",
        "scenario.m": "1 + 0.3*sin(3*x1 - t)*cos(2*x2)",
        "bounds.R1": "1",
        "bounds.R2": "1",
        "bounds.R3": "1",
        "bounds.R4": "6",
        "bounds.R5": "2",
    },
}


@dataclass(frozen=True)
class AprioriBounds:
    R1: float
    R2: float
    R3: float
    R4: float
    R5: float

    def __post_init__(self):
        if min(self.R1, self.R2, self.R3, self.R4, self.R5) <= 0:
            raise ValueError("a-priori bounds must be positive")

    @property
    def R(self) -> float:
        return max(self.R1, self.R2, self.R3, self.R4, self.R5)


class Scenario:
    """A manufactured MFG scenario built from closed-form expressions."""

    def __init__(
        self,
        name: str,
        domain: DomainSpec,
        counts: dict,
        P: str,
        G1: str,
        k: str,
        u: str,
        m: str,
        bounds: AprioriBounds,
    ):
        self.name = name
        self.domain = domain
        self.counts = dict(counts)
        self.bounds = bounds
        self.spec = InteractionSpec.from_expressions(P, G1, k, R1=bounds.R1, R2=bounds.R2)
        vars3 = ("x1", "x2", "t")
        self.u_expr = parse(u, vars3)
        self.m_expr = parse(m, vars3)
        self.k_expr = parse(k, ("x1", "x2"))
        self.g_expr = parse(G1, ("x1", "x2", "y2"))
        self.expressions = {"P": P, "G1": G1, "k": k, "u": u, "m": m}

    @classmethod
    def from_config(cls, cfg: dict) -> Scenario:
        n = int(cfg.get("domain.n", 1))
        a_i = (float(cfg["domain.a2"]),) if n == 2 else ()
        domain = DomainSpec(
            n=n,
            a=float(cfg["domain.a"]),
            b=float(cfg["domain.b"]),
            T=float(cfg["domain.T"]),
            alpha=float(cfg.get("domain.alpha", 1.0)),
            a_i=a_i,
        )
        counts = {"nx1": int(cfg["grid.nx1"]), "nt": int(cfg["grid.nt"])}
        if n == 2:
            counts["nx2"] = int(cfg["grid.nx2"])
        bounds = AprioriBounds(*(float(cfg[f"bounds.R{i}"]) for i in range(1, 6)))
        return cls(
            cfg.get("scenario.name", "custom"),
            domain,
            counts,
            cfg["interaction.P"],
            cfg.get("interaction.G1", "0"),
            cfg.get("interaction.k", "1"),
            cfg["scenario.u"],
            cfg["scenario.m"],
            bounds,
        )

    @classmethod
    def builtin(cls, name: str, **overrides) -> Scenario:
        cfg = dict(BUILTIN[name])
        cfg.update({k: str(v) for k, v in overrides.items()})
        return cls.from_config(cfg)

    def grid(self, nx1: int | None = None, nt: int | None = None, nx2: int | None = None) -> Grid:
        nx1 = nx1 or self.counts["nx1"]
        nt = nt or self.counts["nt"]
        nxi = ((nx2 or self.counts["nx2"]),) if self.domain.n == 2 else ()
        return build_grid(self.domain, nx1, nt, nxi)

    # closed-form pieces -------------------------------------------------

    @cached_property
    def _local_parts(self):
        x1, x2, t = SYMBOLS["x1"], SYMBOLS["x2"], SYMBOLS["t"]
        xs = [x1, x2][: self.domain.n]
        u, m, k = self.u_expr, self.m_expr, self.k_expr
        alpha = sympy.Float(self.domain.alpha)
        lap = lambda f: sum(sympy.diff(f, v, 2) for v in xs)  # noqa: E731
        bellman_local = (
            sympy.diff(u, t) + alpha * lap(u) + k**2 / 2 * sum(sympy.diff(u, v) ** 2 for v in xs)
        )
        fp = sympy.diff(m, t) - alpha * lap(m) + sum(sympy.diff(k**2 * m * sympy.diff(u, v), v) for v in xs)
        vars3 = ("x1", "x2", "t")
        return lambdify(bellman_local, vars3), lambdify(-fp, vars3)

    def exact(self, grid: Grid) -> tuple[ScalarField, ScalarField]:
        t, *xs = grid.mesh()
        x2 = xs[1] if grid.n == 2 else np.zeros_like(xs[0])
        u = lambdify(self.u_expr, ("x1", "x2", "t"))(xs[0], x2, t)
        m = lambdify(self.m_expr, ("x1", "x2", "t"))(xs[0], x2, t)
        return ScalarField(grid, u), ScalarField(grid, m)

    def exact_nonlocal(self, grid: Grid) -> np.ndarray:
        """Continuum nonlocal term of ``m*`` on the grid (Gauss-Legendre in y2)."""
        t, *xs = grid.mesh()
        if grid.n == 1:
            m = lambdify(self.m_expr, ("x1", "x2", "t"))(xs[0], 0.0 * t, t)
            return self.spec.G1(xs[0], 0.0 * t, 0.0 * t) * m
        a2 = self.domain.a_i[0]
        nodes, weights = leggauss(_GAUSS_NODES)
        y = a2 * nodes
        w = a2 * weights
        mfun = lambdify(self.m_expr, ("x1", "x2", "t"))
        x1e, x2e, te = xs[0][..., None], xs[1][..., None], t[..., None]
        integrand = self.spec.G1(x1e, x2e, y) * mfun(x1e, y + 0.0 * x2e, te)
        return np.sum(integrand * w, axis=-1)

    def sources(self, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """Forcing terms ``(f_u, f_m)`` making the exact pair a solution."""
        bellman_local, fp_neg = self._local_parts
        t, *xs = grid.mesh()
        x2 = xs[1] if grid.n == 2 else np.zeros_like(xs[0])
        _, m_exact = self.exact(grid)
        z1 = self.exact_nonlocal(grid)
        f_u = -(bellman_local(xs[0], x2, t) + self.spec.P(xs[0], x2, t, z1, m_exact.values))
        f_m = fp_neg(xs[0], x2, t)
        return f_u, f_m

    def forward_problem(self, grid: Grid | None = None) -> ForwardProblem:
        grid = grid or self.grid()
        u, m = self.exact(grid)
        f_u, f_m = self.sources(grid)
        return ForwardProblem(
            grid=grid,
            spec=self.spec,
            u_T=u.values[-1].copy(),
            m_0=m.values[0].copy(),
            u_dirichlet=u.values.copy(),
            m_dirichlet=m.values.copy(),
            source_u=f_u,
            source_m=f_m,
            R4=self.bounds.R4,
            R5=self.bounds.R5,
        )

    def cauchy_data(self, grid: Grid | None = None) -> CauchyData:
        """Lateral Cauchy data of the exact pair sampled on ``grid``."""
        u, m = self.exact(grid or self.grid())
        return extract_traces(u, m)

    def box_check(self, u: ScalarField, m: ScalarField) -> dict:
        """sup-norm checks of the a-priori sets for (u, m)."""
        from .fields import grad, laplacian

        g_u = np.sqrt(sum(g.values**2 for g in grad(u)))
        g_m = np.sqrt(sum(g.values**2 for g in grad(m)))
        stats = {
            "sup_u": float(np.max(np.abs(u.values))),
            "sup_grad_u": float(np.max(g_u)),
            "sup_lap_u": float(np.max(np.abs(laplacian(u).values))),
            "sup_m": float(np.max(np.abs(m.values))),
            "sup_grad_m": float(np.max(g_m)),
        }
        R4, R5 = self.bounds.R4, self.bounds.R5
        stats["ok"] = (
            max(stats["sup_u"], stats["sup_grad_u"], stats["sup_lap_u"]) <= R4
            and max(stats["sup_m"], stats["sup_grad_m"]) <= R5
        )
        return stats

    def interaction_on(self, m: ScalarField) -> np.ndarray:
        return interaction_field(self.spec, m.values, m.grid)
