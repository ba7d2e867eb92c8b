from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from mfgcauchy.cwf import CarlemanParams
from mfgcauchy.fields import CauchyData, ScalarField, norm_h21_cylinder, perturb_to_delta
from mfgcauchy.grid import shrink_cylinder
from mfgcauchy.ops import grid_operators
from mfgcauchy.reconstruct import (
    Objective,
    ReconOptions,
    _StepSolver,
    assemble_objective,
    consistent_sources,
    multistart,
    objective_gradient,
    reconstruct,
    weighted_slice_inequality,
)
from mfgcauchy.scenarios import Scenario


def _setup(sc, lam=5.0):
    grid = sc.grid()
    params = CarlemanParams.from_domain(grid.domain, lam, eps=grid.T / 8)
    return grid, params, sc.cauchy_data(grid), *sc.sources(grid)


def _random_pair(grid, rng, scale=0.5):
    return ScalarField(grid, scale * rng.standard_normal(grid.shape)), ScalarField(
        grid, 1 + scale * rng.standard_normal(grid.shape)
    )


@pytest.mark.parametrize("name", ["S1", "S2", "S3"])
def test_gradient_matches_central_differences(name, rng):
    small = {"grid.nx1": 9, "grid.nt": 9, **({"grid.nx2": 7} if name == "S3" else {})}
    sc = Scenario.builtin(name, **small)
    grid, params, data, fu, fm = _setup(sc)
    obj = Objective(grid, sc.spec, data, params, 1e-2, 1e-6, fu, fm)
    for _ in range(3):
        u, m = _random_pair(grid, rng)
        x = np.concatenate([u.flat, m.flat])
        v = rng.standard_normal(x.size)
        h = 1e-5
        fd = (obj.value(x + h * v) - obj.value(x - h * v)) / (2 * h)
        gu, gm = objective_gradient(u, m, data, params, 1e-2, 1e-6, sc.spec, fu, fm)
        an = float(np.concatenate([gu.flat, gm.flat]) @ v)
        assert an == pytest.approx(fd, rel=1e-6)


def test_regularization_gradient_matches_direct_assembly(s1_small, rng):
    grid, params, data, *_ = _setup(s1_small)
    beta = 0.37
    obj = Objective(grid, s1_small.spec, data, params, 0.0, beta)
    ops = grid_operators(grid)
    w = sp.diags(grid.trapezoid_weights.ravel())
    blocks = [ops.dt @ ops.dt, *(np.sqrt(2) * (ops.dt @ d) for d in ops.dx), *(m for _, m in ops.hessian_pairs())]
    single = sum(b.T @ w @ b for b in blocks)
    direct = beta * sp.block_diag([single, single])
    u = rng.standard_normal(2 * grid.size)
    np.testing.assert_allclose(2 * obj.regularization_operator() @ u, 2 * direct @ u, rtol=1e-10, atol=1e-8)


def test_boundary_term_linear_in_gamma(s1_small, rng):
    grid, params, data, fu, fm = _setup(s1_small)
    x = rng.standard_normal(2 * grid.size)
    b1 = Objective(grid, s1_small.spec, data, params, 1.0, 0.0, fu, fm).parts(x).boundary
    b2 = Objective(grid, s1_small.spec, data, params, 2.0, 0.0, fu, fm).parts(x).boundary
    assert b2 == pytest.approx(2 * b1, rel=1e-14)


def test_zero_pair_with_zero_data_is_zero(s1_small):
    grid, params, data, *_ = _setup(s1_small)
    zero_data = CauchyData.from_vectors(grid, {q: 0 * data.vector(q) for q in ("g0", "g1", "p0", "p1")})
    z = ScalarField.zeros(grid)
    assert assemble_objective(z, z, zero_data, params, 1.0, 1.0, s1_small.spec) == 0.0


def test_truth_is_near_zero_of_functional(s1):
    grid, params, data, fu, fm = _setup(s1)
    u, m = s1.exact(grid)
    z = ScalarField.zeros(grid)
    at_truth = assemble_objective(u, m, data, params, 1e-4, 0.0, s1.spec, fu, fm)
    at_zero = assemble_objective(z, z, data, params, 1e-4, 0.0, s1.spec, fu, fm)
    assert 0 < at_truth < 1e-4 * at_zero


def test_truth_start_is_stationary(s1_small):
    grid, params, data, *_ = _setup(s1_small)
    u, m = s1_small.exact(grid)
    fu, fm = consistent_sources(grid, s1_small.spec, u, m)
    res = reconstruct(data, params, s1_small.bounds, s1_small.spec, source_u=fu, source_m=fm, init=(u, m))
    assert res.converged and res.last_update_norm <= 10 * ReconOptions().gtol
    np.testing.assert_array_equal(res.u.values, u.values)


def test_zero_start_recovers_consistent_truth(s1_small):
    grid, params, data, *_ = _setup(s1_small)
    u, m = s1_small.exact(grid)
    fu, fm = consistent_sources(grid, s1_small.spec, u, m)
    res = reconstruct(data, params, s1_small.bounds, s1_small.spec, beta=0.0, source_u=fu, source_m=fm)
    region = shrink_cylinder(grid, grid.T / 8)
    assert res.converged
    assert norm_h21_cylinder(res.u - u, region) + norm_h21_cylinder(res.m - m, region) < 1e-4
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res.objective_history, res.objective_history[1:]))


def test_noisy_misfit_tracks_delta(s1):
    grid, params, data, fu, fm = _setup(s1)
    delta = 1e-3
    noisy = perturb_to_delta(data, delta, seed=0)
    res = reconstruct(noisy, params, s1.bounds, s1.spec, source_u=fu, source_m=fm)
    assert res.converged
    for q, v in res.boundary_misfit.items():
        assert delta / 3 <= v <= 3 * delta, q


def test_projection_keeps_box(s1_small):
    grid, params, data, fu, fm = _setup(s1_small)
    res = reconstruct(data, params, s1_small.bounds, s1_small.spec, source_u=fu, source_m=fm, init=np.full(2 * grid.size, 50.0))
    assert np.max(np.abs(res.u.values)) <= s1_small.bounds.R4
    assert np.max(np.abs(res.m.values)) <= s1_small.bounds.R5


def test_iterative_step_matches_direct(s1_small):
    grid, params, data, fu, fm = _setup(s1_small)
    obj = Objective(grid, s1_small.spec, data, params, 1e-2, 1e-8, fu, fm)
    J = obj.jacobian(np.zeros(2 * grid.size))
    A = sp.csc_matrix(J.T @ J + 1e-10 * sp.identity(2 * grid.size))
    rhs = np.random.default_rng(0).standard_normal(2 * grid.size)
    direct = _StepSolver(10**9)(A, rhs)
    iterative = _StepSolver(0)(A, rhs)
    assert np.linalg.norm(iterative - direct) <= 1e-6 * np.linalg.norm(direct)


def test_stalled_gmres_tightens_then_solves_directly(monkeypatch):
    import mfgcauchy.reconstruct as rc

    n = 50
    A = sp.csc_matrix(sp.diags([-1.0, 2.5, -1.0], [-1, 0, 1], shape=(n, n)))
    rhs = np.arange(1.0, n + 1)
    monkeypatch.setattr(rc.spla, "gmres", lambda A, b, **kw: (np.zeros_like(b), 20))
    solver = _StepSolver(0, ilu_drop=1e-4, ilu_fill=5.0)
    x = solver(A, rhs)
    np.testing.assert_allclose(A @ x, rhs, rtol=1e-12)
    assert solver.ilu_drop == pytest.approx(1e-5) and solver.ilu_fill == 10.0


def test_slice_inequality_holds(grid2, rng):
    params = CarlemanParams.from_domain(grid2.domain, 10.0, eps=0.125)
    for _ in range(5):
        out = weighted_slice_inequality(ScalarField(grid2, rng.standard_normal(grid2.shape)), params)
        assert out["holds"] and 0 < out["ratio"] <= 1


def test_multistart_reports(s1_small):
    grid, params, data, fu, fm = _setup(s1_small)
    rep = multistart(data, params, s1_small.bounds, s1_small.spec, seeds=(1, 2), source_u=fu, source_m=fm)
    assert rep["seeds"] == [1, 2] and len(rep["objective_final"]) == 2
    assert rep["max_pairwise_h21"] >= 0
