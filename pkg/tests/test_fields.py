from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfgcauchy.fields import (
    QUANTITIES,
    CauchyData,
    ScalarField,
    d_t,
    extract_traces,
    grad,
    hessian,
    laplacian,
    lateral_norms,
    norm_h21_cylinder,
    norm_lateral,
    perturb_to_delta,
)
from mfgcauchy.grid import DomainSpec, build_grid, shrink_cylinder

# squared norms underflow for scale factors near 1e-160, so keep them representable
SCALES = st.one_of(st.just(0.0), st.floats(1e-50, 50), st.floats(-50, -1e-50))


def _zero_data(grid):
    return CauchyData(
        grid, {lab: {q: np.zeros((grid.nt, f.n_tangential)) for q in QUANTITIES} for lab, f in grid.faces.items()}
    )


def _smooth_data(grid, seed):
    rng = np.random.default_rng(seed)
    c = rng.standard_normal(4)
    u = ScalarField.from_function(grid, lambda t, x1, *r: c[0] * np.sin(3 * x1 + t) + c[1] * x1 * t)
    m = ScalarField.from_function(grid, lambda t, x1, *r: c[2] * np.cos(2 * x1 - t) + c[3] * t**2)
    return extract_traces(u, m)


# operators ------------------------------------------------------------------


def test_linear_and_quadratic_exactness(grid1, grid2):
    for g in (grid1, grid2):
        x1 = ScalarField.from_function(g, lambda t, x1, *r: x1)
        gx = grad(x1)
        np.testing.assert_allclose(gx[0].values, 1.0, atol=1e-11)
        for comp in gx[1:]:
            np.testing.assert_allclose(comp.values, 0.0, atol=1e-11)
        np.testing.assert_allclose(laplacian(x1).values, 0.0, atol=1e-9)
        t2 = ScalarField.from_function(g, lambda t, *r: t**2)
        np.testing.assert_allclose(d_t(t2).values, 2 * g.mesh()[0], atol=1e-11)


def test_mixed_hessian_of_product(grid2):
    f = ScalarField.from_function(grid2, lambda t, x1, x2: x1 * x2 + x1**2)
    H = hessian(f)
    np.testing.assert_allclose(H[0][1].values, 1.0, atol=1e-9)
    np.testing.assert_allclose(H[0][0].values, 2.0, atol=1e-8)
    assert H[0][1] is H[1][0]


def test_laplacian_second_order():
    errs, hs = [], []
    for nx in (21, 41, 81):
        g = build_grid(DomainSpec(n=1, a=0.25, b=0.5, T=1.0), nx, 5)
        f = ScalarField.from_function(g, lambda t, x1: np.sin(np.pi * x1))
        exact = -np.pi**2 * np.sin(np.pi * g.mesh()[1])
        errs.append(np.max(np.abs(laplacian(f).values - exact)))
        hs.append(g.hx1)
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope > 1.9


# volume norm ----------------------------------------------------------------


def test_h21_norm_of_x1_matches_direct_quadrature(grid1):
    f = ScalarField.from_function(grid1, lambda t, x1: x1)
    x1 = grid1.axes[0]
    wx = np.full(len(x1), grid1.hx1)
    wx[[0, -1]] *= 0.5
    oracle = np.sqrt(grid1.T * np.sum(wx * (x1**2 + 1.0)))
    assert norm_h21_cylinder(f) == pytest.approx(oracle, rel=1e-12)
    a, b, T = 0.25, 0.5, 1.0
    assert norm_h21_cylinder(f) == pytest.approx(np.sqrt(T * ((b**3 - a**3) / 3 + b - a)), rel=1e-3)


def test_h21_zero_and_empty_region(grid1):
    assert norm_h21_cylinder(ScalarField.zeros(grid1)) == 0.0
    with pytest.raises(ValueError):
        norm_h21_cylinder(ScalarField.zeros(grid1), np.zeros(grid1.shape, bool))


def test_h21_monotone_in_region(grid1, rng):
    f = ScalarField(grid1, rng.standard_normal(grid1.shape))
    assert norm_h21_cylinder(f, shrink_cylinder(grid1, 0.3)) <= norm_h21_cylinder(f, shrink_cylinder(grid1, 0.1))
    assert norm_h21_cylinder(f, shrink_cylinder(grid1, 0.1)) <= norm_h21_cylinder(f)


@given(st.integers(0, 2**32 - 1), SCALES)
def test_h21_homogeneity_and_triangle(seed, c):
    g = build_grid(DomainSpec(n=1, a=0.25, b=0.5, T=1.0), 9, 7)
    r = np.random.default_rng(seed)
    f, h = ScalarField(g, r.standard_normal(g.shape)), ScalarField(g, r.standard_normal(g.shape))
    assert norm_h21_cylinder(c * f) == pytest.approx(abs(c) * norm_h21_cylinder(f), rel=1e-12, abs=1e-300)
    assert norm_h21_cylinder(f + h) <= norm_h21_cylinder(f) + norm_h21_cylinder(h) + 1e-12


# lateral norms and traces ---------------------------------------------------


def test_lateral_norm_zero_and_single_face(grid2):
    d = _zero_data(grid2)
    assert all(v == 0.0 for v in lateral_norms(d).values())
    c = 1.7
    d.faces["x1+"]["g1"][:] = c
    area = 2 * grid2.domain.a_i[0]
    assert norm_lateral(d, "g1") == pytest.approx(c * np.sqrt(area * grid2.T), rel=1e-12)


def test_lateral_norm_single_face_equals_face_norm(grid1, rng):
    full = _smooth_data(grid1, 3)
    d = _zero_data(grid1)
    d.faces["x1-"]["g0"][:] = full.faces["x1-"]["g0"]
    other = _zero_data(grid1)
    other.faces["x1+"]["g0"][:] = full.faces["x1+"]["g0"]
    total = norm_lateral(full, "g0") ** 2
    assert norm_lateral(d, "g0") ** 2 + norm_lateral(other, "g0") ** 2 == pytest.approx(total, rel=1e-12)


def test_lateral_norm_rejects_unknown_quantity(grid1):
    with pytest.raises(ValueError):
        norm_lateral(_zero_data(grid1), "q9")


def test_nonconforming_data_rejected(grid1):
    faces = {lab: {q: np.zeros((grid1.nt + 1, 1)) for q in QUANTITIES} for lab in grid1.faces}
    with pytest.raises(ValueError):
        CauchyData(grid1, faces)


def test_traces_of_linear_and_quadratic(grid1, grid2):
    for g in (grid1, grid2):
        one = ScalarField.from_function(g, lambda t, *r: 0 * t + 3.0)
        d = extract_traces(ScalarField.from_function(g, lambda t, x1, *r: x1), one)
        np.testing.assert_allclose(d.faces["x1+"]["g1"], 1.0, atol=1e-11)
        np.testing.assert_allclose(d.faces["x1-"]["g1"], -1.0, atol=1e-11)
        np.testing.assert_allclose(d.vector("p1"), 0.0, atol=1e-10)
        np.testing.assert_allclose(d.vector("p0"), 3.0)
        q = extract_traces(ScalarField.from_function(g, lambda t, x1, *r: x1**2), one)
        np.testing.assert_allclose(q.faces["x1+"]["g1"], 2 * g.domain.b, atol=1e-10)
        np.testing.assert_allclose(q.faces["x1-"]["g1"], -2 * g.domain.a, atol=1e-10)


def test_neumann_trace_second_order():
    errs, hs = [], []
    for nx in (11, 21, 41):
        g = build_grid(DomainSpec(n=1, a=0.25, b=0.5, T=1.0), nx, 5)
        f = ScalarField.from_function(g, lambda t, x1: np.sin(4 * x1 + t))
        d = extract_traces(f, f)
        exact = 4 * np.cos(4 * 0.5 + g.t)
        errs.append(np.max(np.abs(d.faces["x1+"]["g1"][:, 0] - exact)))
        hs.append(g.hx1)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] > 1.9


# noise ----------------------------------------------------------------------


@pytest.mark.parametrize("which", ["grid1", "grid2"])
@pytest.mark.parametrize("delta", [1e-2, 1e-5])
def test_perturbation_norms_equal_delta(which, delta, request):
    g = request.getfixturevalue(which)
    d = _smooth_data(g, 0)
    noisy = perturb_to_delta(d, delta, seed=4)
    for q, v in lateral_norms(noisy - d).items():
        assert v == pytest.approx(delta, rel=1e-12), q


def test_perturbation_determinism(grid1):
    d = _smooth_data(grid1, 1)
    assert perturb_to_delta(d, 0.0, 5).equals(d)
    assert perturb_to_delta(d, 1e-3, 5).equals(perturb_to_delta(d, 1e-3, 5))
    assert not perturb_to_delta(d, 1e-3, 5).equals(perturb_to_delta(d, 1e-3, 6))
    with pytest.raises(ValueError):
        perturb_to_delta(d, -1.0, 0)


@given(st.integers(0, 2**32 - 1), SCALES, st.sampled_from(QUANTITIES))
def test_lateral_homogeneity_and_triangle(seed, c, q):
    g = build_grid(DomainSpec(n=1, a=0.25, b=0.5, T=1.0), 9, 7)
    r = np.random.default_rng(seed)
    vec = lambda: {k: r.standard_normal(2 * g.nt) for k in QUANTITIES}  # noqa: E731
    d1, d2 = CauchyData.from_vectors(g, vec()), CauchyData.from_vectors(g, vec())
    scaled = CauchyData.from_vectors(g, {k: c * d1.vector(k) for k in QUANTITIES})
    total = CauchyData.from_vectors(g, {k: d1.vector(k) + d2.vector(k) for k in QUANTITIES})
    assert norm_lateral(scaled, q) == pytest.approx(abs(c) * norm_lateral(d1, q), rel=1e-12, abs=1e-300)
    assert norm_lateral(total, q) <= norm_lateral(d1, q) + norm_lateral(d2, q) + 1e-12


def test_field_rejects_nonfinite(grid1):
    vals = np.zeros(grid1.shape)
    vals[0, 0] = np.nan
    with pytest.raises(ValueError):
        ScalarField(grid1, vals)
