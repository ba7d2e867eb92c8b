"""Carleman weight function and the scalar parameter rules built around it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DomainSpec, Grid

EXPONENT_CAP = 700.0


class DeltaGateError(ValueError):
    """Noise level too large for the lambda threshold; carries the largest admissible delta."""

    def __init__(self, delta: float, delta0: float, lambda1: float):
        self.delta = delta
        self.delta0 = delta0
        self.lambda1 = lambda1
        super().__init__(
            f"delta={delta:g} gives lambda below lambda1={lambda1:g}; admissible delta < {delta0:.6g}"
        )


def c_squared(eps: float, T: float, a: float, b: float) -> float:
    """Speed parameter ``(b^2 - a^2) / (eps (T - eps))``."""
    if not 0 < eps < T / 2:
        raise ValueError(f"eps must lie in (0, T/2), got eps={eps}, T={T}")
    if not 0 < a < b:
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    return (b * b - a * a) / (eps * (T - eps))


def rho(a: float, b: float) -> float:
    """Hoelder exponent ``(b^2 - a^2) / (10 b^2)``."""
    if not 0 < a < b:
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    return (b * b - a * a) / (10.0 * b * b)


def lambda_of_delta(delta: float, b: float, lambda1: float = 5.0) -> float:
    """lambda = ln(1/delta) / (5 b^2), so that delta^2 exp(5 lambda b^2) == delta.

    Raises DeltaGateError if the result falls below ``lambda1``.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    lam = -math.log(delta) / (5.0 * b * b)
    if lam < lambda1:
        raise DeltaGateError(delta, delta_gate(b, lambda1), lambda1)
    return lam


def delta_gate(b: float, lambda1: float) -> float:
    """Largest delta0 with ln(1/delta0^(1/(5b^2))) >= lambda1."""
    return math.exp(-5.0 * b * b * lambda1)


def reconstruction_lambda(delta: float, b: float, lambda1: float = 5.0, lambda_max: float = 40.0) -> float:
    """lambda_of_delta clipped to ``[lambda1, lambda_max]`` instead of gated."""
    if delta <= 0:
        return lambda1
    lam = -math.log(delta) / (5.0 * b * b)
    return float(min(max(lam, lambda1), lambda_max))


@dataclass(frozen=True)
class CarlemanParams:
    lam: float
    c2: float
    eps: float
    T: float
    a: float
    b: float
    allow_degenerate: bool = False

    def __post_init__(self):
        if self.lam < 1 and not (self.allow_degenerate and self.lam >= 0):
            raise ValueError(f"lambda must be >= 1, got {self.lam}")
        if self.c2 <= 0:
            raise ValueError(f"c^2 must be positive, got {self.c2}")

    @classmethod
    def from_domain(cls, domain: DomainSpec, lam: float, eps: float, c2: float | None = None, **kw) -> CarlemanParams:
        if c2 is None:
            c2 = c_squared(eps, domain.T, domain.a, domain.b)
        return cls(float(lam), float(c2), float(eps), domain.T, domain.a, domain.b, **kw)

    def with_lambda(self, lam: float) -> CarlemanParams:
        return CarlemanParams(float(lam), self.c2, self.eps, self.T, self.a, self.b, self.allow_degenerate)

    @property
    def rho(self) -> float:
        return rho(self.a, self.b)

    @property
    def endpoint_margin(self) -> float:
        """``c^2 T^2 / 4 - b^2``; the endpoint term decays in lambda iff this is positive."""
        return self.c2 * self.T**2 / 4.0 - self.b**2

    @property
    def endpoint_valid(self) -> bool:
        return self.endpoint_margin > 0

    def endpoint_factor(self) -> float:
        return math.exp(-2.0 * self.lam * self.endpoint_margin)

    def as_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "c2": self.c2,
            "eps": self.eps,
            "rho": self.rho,
            "endpoint_valid": self.endpoint_valid,
        }


def log_cwf(x1, t, params: CarlemanParams):
    return 2.0 * params.lam * (np.square(x1) - params.c2 * np.square(np.asarray(t) - params.T / 2.0))


def _exp_capped(expo, cap: float):
    expo = np.asarray(expo, dtype=float)
    if np.any(expo > cap):
        raise OverflowError(f"weight exponent {float(np.max(expo)):.1f} exceeds cap {cap}")
    # Large negative exponents underflow to zero, which is harmless in quadrature.
    out = np.exp(expo)
    return out if out.ndim else float(out)


def cwf_value(x1, t, params: CarlemanParams, cap: float = EXPONENT_CAP):
    """``exp(2 lambda (x1^2 - c^2 (t - T/2)^2))``, evaluated in log space."""
    return _exp_capped(log_cwf(x1, t, params), cap)


def cwf_max_log(params: CarlemanParams) -> float:
    return 2.0 * params.lam * params.b**2


def cwf_min_shrunk(params: CarlemanParams) -> float:
    """Minimum of the weight over the closed shrunken cylinder."""
    return float(
        _exp_capped(2.0 * params.lam * (params.a**2 - params.c2 * (params.T / 2.0 - params.eps) ** 2), EXPONENT_CAP)
    )


def cwf_grid(grid: Grid, params: CarlemanParams, normalize: bool = True, cap: float = EXPONENT_CAP) -> np.ndarray:
    """Weight on every node of ``grid``; divided by its maximum ``exp(2 lambda b^2)`` when normalized."""
    t, x1 = grid.mesh()[:2]
    expo = log_cwf(x1, t, params)
    if normalize:
        expo = expo - cwf_max_log(params)
    return _exp_capped(expo, cap)


def weight_scale(params: CarlemanParams, normalize: bool) -> float:
    """Log of the factor removed from every weighted integral."""
    return cwf_max_log(params) if normalize else 0.0
