from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfgcauchy.cwf import (
    CarlemanParams,
    DeltaGateError,
    c_squared,
    cwf_grid,
    cwf_min_shrunk,
    cwf_value,
    delta_gate,
    lambda_of_delta,
    reconstruction_lambda,
    rho,
)
from mfgcauchy.grid import DomainSpec, build_grid, shrink_cylinder


# grid -----------------------------------------------------------------------


def test_uniform_spacing():
    g = build_grid(DomainSpec(n=1, a=1, b=2, T=1), 11, 11)
    assert g.hx1 == pytest.approx(0.1)
    assert g.ht == pytest.approx(0.1)
    assert g.axes[0][0] == 1.0 and g.axes[0][-1] == 2.0
    assert g.t[0] == 0.0 and g.t[-1] == 1.0


def test_n1_has_two_faces():
    g = build_grid(DomainSpec(n=1, a=1, b=2, T=1), 11, 11)
    assert set(g.faces) == {"x1-", "x1+"}


def test_n2_face_counts_and_partition():
    g = build_grid(DomainSpec(n=2, a=1, b=2, T=1, a_i=(1.0,)), 7, 5, 9)
    assert len(g.faces) == 4
    assert g.nt * g.faces["x1+"].n_tangential == 9 * 5
    owned = np.concatenate([f.spatial_index for f in g.faces.values()])
    assert len(owned) == len(set(owned.tolist())), "faces overlap"
    lateral = np.flatnonzero(g.lateral_mask().ravel())
    assert sorted(owned.tolist()) == sorted(lateral.tolist())


@pytest.mark.parametrize("counts", [(3, 10), (10, 3)])
def test_rejects_small_counts(counts):
    with pytest.raises(ValueError):
        build_grid(DomainSpec(n=1, a=1, b=2, T=1), *counts)


@pytest.mark.parametrize(
    "kw",
    [dict(n=1, a=2, b=1, T=1), dict(n=1, a=1, b=2, T=0), dict(n=3, a=1, b=2, T=1), dict(n=2, a=1, b=2, T=1)],
)
def test_rejects_bad_domain(kw):
    with pytest.raises(ValueError):
        DomainSpec(**kw)


def test_shrink_cylinder_enumeration():
    g = build_grid(DomainSpec(n=1, a=1, b=2, T=1), 5, 11)
    rows = shrink_cylinder(g, 0.25).any(axis=1)
    np.testing.assert_allclose(g.t[rows], [0.3, 0.4, 0.5, 0.6, 0.7])


def test_shrink_cylinder_limits_and_nesting():
    g = build_grid(DomainSpec(n=1, a=1, b=2, T=1), 5, 11)
    assert shrink_cylinder(g, 1e-9).any(axis=1).sum() == g.nt - 2
    for bad in (0.0, 0.5, -0.1):
        with pytest.raises(ValueError):
            shrink_cylinder(g, bad)
    outer, inner = shrink_cylinder(g, 0.1), shrink_cylinder(g, 0.3)
    assert np.all(outer[inner])


# weight and parameter rules -------------------------------------------------


def test_c_squared_and_rho_arithmetic():
    assert c_squared(0.5, 2, 1, 2) == pytest.approx(4.0)
    assert c_squared(0.25, 1, 1, 2) == pytest.approx(16.0)
    assert rho(1, 2) == pytest.approx(0.075)
    assert rho(1, 3) == pytest.approx(8 / 90)
    with pytest.raises(ValueError):
        c_squared(0.0, 1, 1, 2)
    with pytest.raises(ValueError):
        rho(2, 2)


def test_lambda_of_delta_values_and_gate():
    assert lambda_of_delta(math.exp(-5), 1.0, lambda1=1.0) == pytest.approx(1.0)
    assert lambda_of_delta(math.exp(-10), 1.0, lambda1=1.0) == pytest.approx(2.0)
    with pytest.raises(DeltaGateError) as info:
        lambda_of_delta(0.5, 1.0, lambda1=5.0)
    assert info.value.delta0 == pytest.approx(delta_gate(1.0, 5.0))
    assert reconstruction_lambda(0.5, 1.0) == 5.0
    assert reconstruction_lambda(1e-300, 0.5) == 40.0


def test_degenerate_lambda_is_test_only():
    with pytest.raises(ValueError):
        CarlemanParams(0.0, 1.0, 0.1, 1.0, 0.25, 0.5)
    p = CarlemanParams(0.0, 1.0, 0.1, 1.0, 0.25, 0.5, allow_degenerate=True)
    np.testing.assert_array_equal(cwf_value(np.linspace(0.25, 0.5, 5), 0.3, p), 1.0)


def _params(lam=5.0):
    d = DomainSpec(n=1, a=0.25, b=0.5, T=1.0, alpha=0.1)
    return d, CarlemanParams.from_domain(d, lam, eps=0.125)


def test_weight_maximum_and_symmetry():
    d, p = _params(20.0)
    g = build_grid(d, 41, 41)
    w = cwf_grid(g, p, normalize=False)
    assert np.unravel_index(np.argmax(w), w.shape) == (20, 40)
    np.testing.assert_allclose(w, w[::-1], rtol=1e-14)
    assert np.all(np.argmax(w, axis=1) == 40)


def test_weight_monotone_in_lambda():
    _, p5 = _params(5.0)
    _, p10 = _params(10.0)
    assert cwf_value(0.5, 0.5, p10) > cwf_value(0.5, 0.5, p5)
    assert cwf_value(0.25, 0.0, p10) < cwf_value(0.25, 0.0, p5)


def test_exponent_cap_and_underflow():
    d = DomainSpec(n=1, a=0.25, b=10.0, T=1.0)
    p = CarlemanParams.from_domain(d, 40.0, eps=0.25)
    with pytest.raises(OverflowError):
        cwf_value(10.0, 0.5, p)
    _, q = _params(40.0)
    assert cwf_value(0.25, 0.0, q.with_lambda(1e4)) == 0.0


def test_endpoint_condition():
    _, p = _params()
    assert p.endpoint_valid == (p.c2 / 4 - 0.25 > 0)
    assert p.endpoint_factor() < 1.0
    assert p.with_lambda(10.0).endpoint_factor() < p.endpoint_factor()


@given(st.floats(0.05, 0.95), st.floats(1.05, 4.0), st.floats(0.01, 0.49))
def test_rho_and_c2_ranges(a, ratio, eps):
    b = a * ratio
    assert 0 < rho(a, b) < 0.1
    assert c_squared(eps, 1.0, a, b) > 0


def test_min_over_shrunk_cylinder_is_attained_at_corner():
    d, p = _params(5.0)
    g = build_grid(d, 41, 81)
    w = cwf_grid(g, p, normalize=False)
    inside = (g.t >= p.eps - 1e-12) & (g.t <= d.T - p.eps + 1e-12)
    assert w[inside].min() == pytest.approx(cwf_min_shrunk(p), rel=1e-12)
