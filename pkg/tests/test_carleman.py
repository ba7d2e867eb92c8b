from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erf

from mfgcauchy.carleman import (
    BACKWARD,
    FORWARD,
    boundary_family,
    carleman_lhs,
    carleman_rhs_components,
    interior_family,
    reversal_mismatch,
    verify_estimate,
)
from mfgcauchy.cwf import CarlemanParams
from mfgcauchy.fields import ScalarField
from mfgcauchy.grid import DomainSpec, build_grid

DOMAIN = DomainSpec(n=1, a=0.25, b=0.5, T=1.0, alpha=0.1)


def _psi_integral(p: CarlemanParams) -> float:
    """Normalized weight integrated over the cylinder; separable in x1 and t."""
    space, _ = quad(lambda x: math.exp(2 * p.lam * (x * x - p.b**2)), p.a, p.b, epsabs=0, epsrel=1e-13)
    k = 2 * p.lam * p.c2
    time = math.sqrt(math.pi / k) * erf(math.sqrt(k) * p.T / 2)
    return space * time


@pytest.fixture(scope="module")
def fine():
    return build_grid(DOMAIN, 401, 401)


@pytest.mark.parametrize("lam", [1.0, 5.0, 20.0])
@pytest.mark.parametrize("sign", [-1, 1])
def test_lhs_of_t_is_weight_integral(fine, lam, sign):
    p = CarlemanParams.from_domain(DOMAIN, lam, eps=0.125)
    u = ScalarField.from_function(fine, lambda t, x1: t + 0 * x1)
    assert carleman_lhs(u, sign, p) == pytest.approx(_psi_integral(p), rel=1e-4)


@pytest.mark.parametrize("lam", [1.0, 20.0])
def test_hessian_of_x1_squared(fine, lam):
    p = CarlemanParams.from_domain(DOMAIN, lam, eps=0.125)
    comp = carleman_rhs_components(ScalarField.from_function(fine, lambda t, x1: x1**2), p)
    assert comp.hessian == pytest.approx(4 * _psi_integral(p), rel=1e-4)


def test_zero_field(grid1):
    p = CarlemanParams.from_domain(grid1.domain, 5.0, eps=0.125)
    z = ScalarField.zeros(grid1)
    assert carleman_lhs(z, -1, p) == 0.0
    c = carleman_rhs_components(z, p)
    assert (c.time, c.hessian, c.lower, c.boundary, c.endpoint) == (0, 0, 0, 0, 0)
    rep = verify_estimate(FORWARD, [z, interior_family(grid1, 1)[0]], (5.0, 10.0))
    assert all(cell.skipped for cell in rep.cells if cell.member == 0)
    assert rep.C_star is not None and rep.C_star > 0


def test_sign_validation(grid1):
    p = CarlemanParams.from_domain(grid1.domain, 5.0, eps=0.125)
    with pytest.raises(ValueError):
        carleman_lhs(ScalarField.zeros(grid1), 0, p)
    with pytest.raises(ValueError):
        verify_estimate("4.1", interior_family(grid1, 1))


def test_quadratic_scaling_and_ratio_invariance(grid1):
    u = interior_family(grid1, 3)[2]
    a = verify_estimate(FORWARD, [u], (5.0, 20.0))
    b = verify_estimate(FORWARD, [3.0 * u], (5.0, 20.0))
    for ca, cb in zip(a.cells, b.cells):
        assert cb.lhs == pytest.approx(9 * ca.lhs, rel=1e-12)
        assert cb.ratio == pytest.approx(ca.ratio, rel=1e-12)


def test_interior_family_has_no_deficits(grid1):
    p = CarlemanParams.from_domain(grid1.domain, 10.0, eps=0.125)
    fam = interior_family(grid1, 24)
    assert len(fam) == 24
    for u in fam:
        c = carleman_rhs_components(u, p)
        volume = sum(c.volume_groups())
        assert c.boundary <= 1e-12 * volume and c.endpoint == 0.0
        assert c.time > 0 and c.lower > 0


def test_boundary_family_exercises_deficits(grid1):
    p = CarlemanParams.from_domain(grid1.domain, 10.0, eps=0.125)
    comps = [carleman_rhs_components(u, p) for u in boundary_family(grid1, 4)]
    assert all(c.boundary > 0 for c in comps)
    big = p.with_lambda(20.0)
    u = boundary_family(grid1, 1)[0]
    assert carleman_rhs_components(u, big).boundary > comps[0].boundary


def test_family_is_seeded(grid1):
    a, b, c = interior_family(grid1, 16, 0), interior_family(grid1, 16, 0), interior_family(grid1, 16, 1)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    assert not np.array_equal(a[-1].values, c[-1].values)


def test_time_reversal_symmetry(grid1):
    fam = interior_family(grid1, 6) + boundary_family(grid1, 2)
    fwd = verify_estimate(FORWARD, fam, (5.0, 10.0, 20.0))
    bwd = verify_estimate(BACKWARD, [u.time_reversed() for u in fam], (5.0, 10.0, 20.0))
    assert reversal_mismatch(fwd, bwd) <= 1e-10
    same = verify_estimate(BACKWARD, fam, (5.0, 10.0, 20.0))
    assert reversal_mismatch(fwd, same) > 1e-6


def test_family_validation(grid1, grid2):
    with pytest.raises(ValueError):
        verify_estimate(FORWARD, [])
    with pytest.raises(ValueError):
        verify_estimate(FORWARD, [ScalarField.zeros(grid1), ScalarField.zeros(build_grid(DOMAIN, 9, 9))])


def test_invalid_endpoint_warns(grid1, caplog):
    u = interior_family(grid1, 1)
    rep = verify_estimate(FORWARD, u, (5.0,), c2=0.5)
    assert not rep.endpoint_valid
    assert "endpoint" in caplog.text


def test_report_serializes(grid1):
    rep = verify_estimate(FORWARD, interior_family(grid1, 4), (5.0, 10.0))
    d = rep.to_dict()
    assert len(d["cells"]) == 8 and d["lambda0_estimate"] == 5.0
    assert d["min_ratio_spread"] >= 1.0


def test_coarse_two_dimensional_family_keeps_traces_zero(grid2):
    fam = interior_family(grid2, 20)
    p = CarlemanParams.from_domain(grid2.domain, 20.0, eps=0.125)
    assert all(carleman_rhs_components(u, p).boundary == 0.0 for u in fam)
    rep = verify_estimate(FORWARD, fam, (5.0, 10.0, 20.0, 40.0))
    assert rep.C_star > 0 and rep.lambda0_estimate == 5.0
