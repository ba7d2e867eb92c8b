from __future__ import annotations

import numpy as np
import pytest

from mfgcauchy import _kernels
from mfgcauchy._kernels import backend, bellman_march_1d, fp_march_1d
from mfgcauchy.forward import picard_solve

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


def _inputs(nx, rng):
    x = np.linspace(0.0, 0.5, nx)
    edges = np.linspace(0.0, 1.0, nx)
    u = np.cos(2 * x + edges[:, None]) + 0.01 * rng.standard_normal((nx, nx))
    k2 = (0.5 + 0.5 * x) ** 2
    hx, ht = 0.5 / (nx - 1), 1.0 / (nx - 1)
    src = np.sin(3 * x - edges[:, None])
    bell = (u[-1], src, k2, np.cos(edges), np.cos(1 + edges), 0.1, hx, ht)
    fp = (1 + 0.3 * np.sin(3 * x), u, 0.5 * (k2[1:] + k2[:-1]), src, np.ones(nx), np.ones(nx), 0.1, hx, ht)
    return bell, fp


def test_backend_reads_environment(monkeypatch):
    monkeypatch.setenv("MFGCAUCHY_BACKEND", "numpy")
    assert backend() == "numpy"
    monkeypatch.setenv("MFGCAUCHY_BACKEND", " NumPy ")
    assert backend() == "numpy"
    monkeypatch.setenv("MFGCAUCHY_BACKEND", "fortran")
    with pytest.raises(ValueError):
        backend()


def test_numba_request_without_numba_falls_back(monkeypatch):
    monkeypatch.setenv("MFGCAUCHY_BACKEND", "numba")
    monkeypatch.setattr(_kernels, "HAVE_NUMBA", False)
    assert backend() == "numpy"


@needs_numba
@pytest.mark.parametrize("nx", [5, 17, 64])
def test_kernels_agree(nx, rng):
    bell, fp = _inputs(nx, rng)
    for fn, args in ((bellman_march_1d, bell), (fp_march_1d, fp)):
        a = fn(*args, which="numba")
        b = fn(*args, which="numpy")
        assert a.shape == (nx, nx)
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


@needs_numba
def test_forward_solve_is_backend_independent(monkeypatch, s1_small):
    out = {}
    for name in ("numba", "numpy"):
        monkeypatch.setenv("MFGCAUCHY_BACKEND", name)
        sol = picard_solve(s1_small.forward_problem())
        out[name] = (sol.u.values, sol.m.values)
    np.testing.assert_allclose(out["numba"][0], out["numpy"][0], atol=1e-12)
    np.testing.assert_allclose(out["numba"][1], out["numpy"][1], atol=1e-12)
