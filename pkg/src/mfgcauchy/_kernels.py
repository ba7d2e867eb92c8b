"""Hot loops of the 1-D implicit-explicit marching schemes.

Each kernel exists twice: a numba ``@njit`` version and a plain numpy one.
``MFGCAUCHY_BACKEND=numpy`` forces the fallback; the default uses numba
when it imports.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import solve_banded

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn


def backend() -> str:
    """Active backend name, read from the environment on every call."""
    choice = os.environ.get("MFGCAUCHY_BACKEND", "numba").strip().lower()
    if choice not in ("numba", "numpy"):
        raise ValueError(f"MFGCAUCHY_BACKEND must be 'numba' or 'numpy', got {choice!r}")
    if choice == "numba" and not HAVE_NUMBA:
        return "numpy"
    return choice


@njit(cache=True)
def thomas_solve(lower, diag, upper, rhs):
    """Tridiagonal solve; ``lower[0]`` and ``upper[-1]`` are ignored."""
    n = rhs.shape[0]
    c = np.empty(n)
    d = np.empty(n)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / denom
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom
    x = np.empty(n)
    x[n - 1] = d[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


@njit(cache=True)
def _bellman_march_1d_nb(u_T, explicit, k2, left, right, alpha, hx, ht):
    nt = explicit.shape[0]
    nx = u_T.shape[0]
    u = np.empty((nt, nx))
    u[nt - 1] = u_T
    r = alpha * ht / (hx * hx)
    ni = nx - 2
    lower = np.full(ni, -r)
    diag = np.full(ni, 1.0 + 2.0 * r)
    upper = np.full(ni, -r)
    rhs = np.empty(ni)
    for n in range(nt - 2, -1, -1):
        for i in range(1, nx - 1):
            g = (u[n + 1, i + 1] - u[n + 1, i - 1]) / (2.0 * hx)
            rhs[i - 1] = u[n + 1, i] + ht * (0.5 * k2[i] * g * g + explicit[n + 1, i])
        rhs[0] += r * left[n]
        rhs[ni - 1] += r * right[n]
        u[n, 1 : nx - 1] = thomas_solve(lower, diag, upper, rhs)
        u[n, 0] = left[n]
        u[n, nx - 1] = right[n]
    return u


@njit(cache=True)
def _fp_march_1d_nb(m0, u, k2mid, source, left, right, alpha, hx, ht):
    nt = u.shape[0]
    nx = m0.shape[0]
    m = np.empty((nt, nx))
    m[0] = m0
    r = alpha * ht / (hx * hx)
    ni = nx - 2
    lower = np.full(ni, -r)
    diag = np.full(ni, 1.0 + 2.0 * r)
    upper = np.full(ni, -r)
    rhs = np.empty(ni)
    flux = np.empty(nx - 1)
    for n in range(nt - 1):
        for i in range(nx - 1):
            flux[i] = k2mid[i] * 0.5 * (m[n, i] + m[n, i + 1]) * (u[n, i + 1] - u[n, i]) / hx
        for i in range(1, nx - 1):
            div = (flux[i] - flux[i - 1]) / hx
            rhs[i - 1] = m[n, i] - ht * (div + source[n, i])
        rhs[0] += r * left[n + 1]
        rhs[ni - 1] += r * right[n + 1]
        m[n + 1, 1 : nx - 1] = thomas_solve(lower, diag, upper, rhs)
        m[n + 1, 0] = left[n + 1]
        m[n + 1, nx - 1] = right[n + 1]
    return m


def _banded(ni: int, r: float) -> np.ndarray:
    ab = np.empty((3, ni))
    ab[0] = -r
    ab[1] = 1.0 + 2.0 * r
    ab[2] = -r
    return ab


def _bellman_march_1d_np(u_T, explicit, k2, left, right, alpha, hx, ht):
    nt = explicit.shape[0]
    nx = u_T.shape[0]
    u = np.empty((nt, nx))
    u[-1] = u_T
    r = alpha * ht / hx**2
    ab = _banded(nx - 2, r)
    for n in range(nt - 2, -1, -1):
        g = (u[n + 1, 2:] - u[n + 1, :-2]) / (2.0 * hx)
        rhs = u[n + 1, 1:-1] + ht * (0.5 * k2[1:-1] * g * g + explicit[n + 1, 1:-1])
        rhs[0] += r * left[n]
        rhs[-1] += r * right[n]
        u[n, 1:-1] = solve_banded((1, 1), ab, rhs)
        u[n, 0] = left[n]
        u[n, -1] = right[n]
    return u


def _fp_march_1d_np(m0, u, k2mid, source, left, right, alpha, hx, ht):
    nt = u.shape[0]
    nx = m0.shape[0]
    m = np.empty((nt, nx))
    m[0] = m0
    r = alpha * ht / hx**2
    ab = _banded(nx - 2, r)
    for n in range(nt - 1):
        flux = k2mid * 0.5 * (m[n, 1:] + m[n, :-1]) * (u[n, 1:] - u[n, :-1]) / hx
        div = (flux[1:] - flux[:-1]) / hx
        rhs = m[n, 1:-1] - ht * (div + source[n, 1:-1])
        rhs[0] += r * left[n + 1]
        rhs[-1] += r * right[n + 1]
        m[n + 1, 1:-1] = solve_banded((1, 1), ab, rhs)
        m[n + 1, 0] = left[n + 1]
        m[n + 1, -1] = right[n + 1]
    return m


def bellman_march_1d(u_T, explicit, k2, left, right, alpha, hx, ht, which: str | None = None):
    """March ``u_t + alpha u_xx + k2/2 u_x^2 + explicit = 0`` from t = T down to 0."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (u_T, explicit, k2, left, right)]
    fn = _bellman_march_1d_nb if (which or backend()) == "numba" else _bellman_march_1d_np
    return fn(*args, float(alpha), float(hx), float(ht))


def fp_march_1d(m0, u, k2mid, source, left, right, alpha, hx, ht, which: str | None = None):
    """March ``m_t - alpha m_xx + (k2 m u_x)_x + source = 0`` from t = 0 up to T."""
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (m0, u, k2mid, source, left, right)]
    fn = _fp_march_1d_nb if (which or backend()) == "numba" else _fp_march_1d_np
    return fn(*args, float(alpha), float(hx), float(ht))
