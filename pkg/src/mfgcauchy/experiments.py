"""End-to-end experiments built on the solver modules.

Forward solves with refinement studies, the Carleman inequality check,
single reconstructions, the exact-data uniqueness check and the noise
sweep that measures the Hoelder rate. Every function takes a resolved
:class:`~mfgcauchy.config.Config` and returns a plain dataclass whose
``to_dict`` is what the CLI writes to disk.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .carleman import BACKWARD, FORWARD, CarlemanReport, interior_family, reversal_mismatch, verify_estimate
from .config import Config, ConfigError
from .cwf import CarlemanParams, DeltaGateError, delta_gate, reconstruction_lambda, rho
from .fields import CauchyData, ScalarField, extract_traces, lateral_norms, norm_h21_cylinder, perturb_to_delta
from .forward import MFGSolution, picard_solve, solve_bellman_backward, solve_fp_forward
from .grid import Grid, shrink_cylinder
from .reconstruct import ReconOptions, ReconstructionResult, consistent_sources, multistart, reconstruct
from .scenarios import Scenario

logger = logging.getLogger(__name__)


def scenario_from(cfg: Config) -> Scenario:
    return Scenario.from_config(cfg)


def eps_from(cfg: Config, grid: Grid) -> float:
    eps = cfg.optional_float("carleman.eps")
    return grid.T / 8.0 if eps is None else eps


# forward -------------------------------------------------------------------


@dataclass
class ForwardRun:
    scenario: str
    solution: MFGSolution
    data: CauchyData
    max_error_u: float
    max_error_m: float
    box: dict
    bounds_check: dict

    def to_dict(self) -> dict:
        s = self.solution
        return {
            "scenario": self.scenario,
            "picard_iters": s.picard_iters,
            "final_update_norm": s.final_update_norm,
            "converged": s.converged,
            "max_error_u": self.max_error_u,
            "max_error_m": self.max_error_m,
            "box": self.box,
            "interaction_bounds": self.bounds_check,
            "lateral_norms": lateral_norms(self.data),
        }


def run_forward(cfg: Config) -> ForwardRun:
    sc = scenario_from(cfg)
    grid = sc.grid()
    sol = picard_solve(
        sc.forward_problem(grid),
        theta=cfg.float("forward.theta"),
        tol=cfg.float("forward.tol"),
        max_iters=cfg.int("forward.max_iters"),
    )
    u, m = sc.exact(grid)
    return ForwardRun(
        scenario=sc.name,
        solution=sol,
        data=extract_traces(sol.u, sol.m),
        max_error_u=float(np.max(np.abs(sol.u.values - u.values))),
        max_error_m=float(np.max(np.abs(sol.m.values - m.values))),
        box=sc.box_check(sol.u, sol.m),
        bounds_check=sc.spec.check_bounds(grid),
    )


# refinement studies ----------------------------------------------------------


@dataclass
class ConvergenceStudy:
    scenario: str
    component: str
    axis: str
    steps: list
    errors: list
    pairwise_orders: list
    fitted_order: float

    def to_dict(self) -> dict:
        return asdict(self)


def _forward_error(sc: Scenario, grid: Grid, component: str, theta: float, tol: float) -> float:
    prob = sc.forward_problem(grid)
    u_ex, m_ex = sc.exact(grid)
    if component == "bellman":
        u = solve_bellman_backward(m_ex, prob.k2, prob.spec, prob.u_T, prob.u_dirichlet, prob.alpha, prob.source_u)
        return float(np.max(np.abs(u.values - u_ex.values)))
    if component == "fp":
        m = solve_fp_forward(u_ex, prob.k2, prob.m_0, prob.m_dirichlet, prob.alpha, prob.source_m)
        return float(np.max(np.abs(m.values - m_ex.values)))
    if component == "picard":
        sol = picard_solve(prob, theta=theta, tol=tol, max_iters=500)
        if not sol.converged:
            logger.warning("picard did not converge on %s", grid.shape)
        return float(max(np.max(np.abs(sol.u.values - u_ex.values)), np.max(np.abs(sol.m.values - m_ex.values))))
    raise ValueError(f"component must be bellman, fp or picard, got {component!r}")


def convergence_study(
    sc: Scenario,
    component: str,
    axis: str,
    levels=None,
    fine: int = 161,
    theta: float = 0.5,
    tol: float = 1e-12,
) -> ConvergenceStudy:
    """Max-norm error against the manufactured pair under refinement.

    ``axis="space"`` halves ``h`` with ``ht`` shrinking like ``h^2`` so the
    first-order time error stays below the spatial one; the order is read
    off against ``h``. ``axis="time"`` refines ``ht`` on a fixed fine
    spatial grid. The transverse count of an n = 2 scenario follows
    ``nx1`` in space studies and stays at ``fine`` otherwise.
    """
    d = sc.domain
    if axis == "space":
        levels = levels or (11, 21, 41)
        h0 = (d.b - d.a) / (levels[0] - 1)
        grids = []
        for nx in levels:
            h = (d.b - d.a) / (nx - 1)
            nt = int(round(25 * (h0 / h) ** 2)) + 1
            grids.append((sc.grid(nx, nt, nx if d.n == 2 else None), h))
    elif axis == "time":
        levels = levels or (11, 21, 41, 81)
        grids = [(sc.grid(fine, nt, fine if d.n == 2 else None), d.T / (nt - 1)) for nt in levels]
    else:
        raise ValueError(f"axis must be 'space' or 'time', got {axis!r}")
    steps, errors = [], []
    for grid, step in grids:
        errors.append(_forward_error(sc, grid, component, theta, tol))
        steps.append(step)
    logs, loge = np.log(steps), np.log(errors)
    pairwise = [float((loge[i] - loge[i + 1]) / (logs[i] - logs[i + 1])) for i in range(len(steps) - 1)]
    fitted = float(np.polyfit(logs, loge, 1)[0])
    return ConvergenceStudy(sc.name, component, axis, steps, errors, pairwise, fitted)


# Carleman check ------------------------------------------------------------


def run_carleman(cfg: Config, theorem: str | None = None, lambdas=None, reversed_family: bool = False) -> CarlemanReport:
    sc = scenario_from(cfg)
    grid = sc.grid()
    theorem = theorem or cfg["carleman.theorem"]
    lambdas = lambdas or cfg.floats("carleman.lambdas")
    family = interior_family(grid, cfg.int("carleman.family_size"), seed=cfg.int("run.seed"))
    if reversed_family:
        family = [f.time_reversed() for f in family]
    return verify_estimate(
        theorem, family, lambdas, eps=eps_from(cfg, grid), normalize=cfg.bool("carleman.normalize")
    )


@dataclass
class CarlemanSymmetry:
    forward: CarlemanReport
    backward_reversed: CarlemanReport
    mismatch: float

    def to_dict(self) -> dict:
        return {"mismatch": self.mismatch, "forward": self.forward.to_dict(), "backward_reversed": self.backward_reversed.to_dict()}


def carleman_symmetry(cfg: Config, lambdas=None) -> CarlemanSymmetry:
    """Forward-operator report against the backward-operator report on the time-reversed family."""
    fwd = run_carleman(cfg, FORWARD, lambdas)
    bwd = run_carleman(cfg, BACKWARD, lambdas, reversed_family=True)
    return CarlemanSymmetry(fwd, bwd, reversal_mismatch(fwd, bwd))


@lru_cache(maxsize=8)
def _lambda0_cached(grid: Grid, eps: float) -> float | None:
    rep = verify_estimate(FORWARD, interior_family(grid, 24), eps=eps)
    return rep.lambda0_estimate


def lambda0_threshold(grid: Grid, eps: float) -> float | None:
    """Empirical lambda_0 of the forward-operator inequality on this grid."""
    return _lambda0_cached(grid, float(eps))


# reconstruction ----------------------------------------------------------------


@dataclass
class ReconRun:
    scenario: str
    delta: float
    seed: int
    lam: float
    delta0: float
    gate_overridden: bool
    error_u: float
    error_m: float
    result: ReconstructionResult
    params: CarlemanParams
    multistart: dict | None = None

    @property
    def error(self) -> float:
        return self.error_u + self.error_m

    def to_dict(self) -> dict:
        p = self.params
        return {
            "scenario": self.scenario,
            "delta": self.delta,
            "seed": self.seed,
            "lambda": self.lam,
            "lambda_policy": "clip(ln(1/delta)/(5 b^2), lambda1, lambda_max)",
            "delta0": self.delta0,
            "gate_overridden": self.gate_overridden,
            "c2": p.c2,
            "eps": p.eps,
            "rho": p.rho,
            "weight_decay_exponent": math.exp(-p.lam * (p.b**2 - p.a**2) / 2.0),
            "delta_pow_rho": self.delta**p.rho if self.delta > 0 else 0.0,
            "delta_pow_2rho": self.delta ** (2 * p.rho) if self.delta > 0 else 0.0,
            "error_u": self.error_u,
            "error_m": self.error_m,
            "error": self.error,
            "multistart": self.multistart,
            **{f"recon_{k}": v for k, v in self.result.summary().items()},
        }


def recon_params(cfg: Config, grid: Grid, delta: float, check_lambda0: bool = True) -> CarlemanParams:
    """Weight parameters for one reconstruction, refusing lambda below the measured lambda_0."""
    b = grid.domain.b
    lam = cfg.optional_float("carleman.lambda")
    if lam is None:
        lam = reconstruction_lambda(delta, b, cfg.float("carleman.lambda1"), cfg.float("carleman.lambda_max"))
    eps = eps_from(cfg, grid)
    if check_lambda0:
        lam0 = lambda0_threshold(grid, eps)
        if lam0 is None:
            raise ValueError("no lambda on the verification grid satisfies the weighted inequality; refusing to reconstruct")
        if lam < lam0:
            raise ValueError(f"lambda={lam:g} is below the measured threshold lambda_0={lam0:g}")
    return CarlemanParams.from_domain(grid.domain, lam, eps)


def run_reconstruction(
    cfg: Config,
    delta: float | None = None,
    seed: int | None = None,
    data: CauchyData | None = None,
    allow_gate_override: bool = False,
) -> ReconRun:
    """Reconstruct from (possibly perturbed) lateral data of the configured scenario."""
    sc = scenario_from(cfg)
    grid = data.grid if data is not None else sc.grid()
    delta = cfg.float("recon.delta") if delta is None else float(delta)
    seed = cfg.int("run.seed") if seed is None else int(seed)
    b, lam1 = grid.domain.b, cfg.float("carleman.lambda1")
    delta0 = delta_gate(b, lam1)
    over = delta >= delta0
    if over and not allow_gate_override:
        raise DeltaGateError(delta, delta0, lam1)
    if data is None:
        data = perturb_to_delta(sc.cauchy_data(grid), delta, seed)
    for key, allowed in (("recon.source", ("closed_form", "consistent")), ("recon.init", ("zero", "truth"))):
        if cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {', '.join(allowed)}, got {cfg[key]!r}")
    params = recon_params(cfg, grid, delta)
    u_ex, m_ex = sc.exact(grid)
    if cfg["recon.source"] == "consistent":
        src_u, src_m = consistent_sources(grid, sc.spec, u_ex, m_ex)
    else:
        src_u, src_m = sc.sources(grid)
    init = (u_ex, m_ex) if cfg["recon.init"] == "truth" else None
    opts = ReconOptions(max_iters=cfg.int("recon.max_iters"), gtol=cfg.float("recon.gtol"))
    kw = dict(
        gamma=cfg.float("recon.gamma"),
        beta=cfg.optional_float("recon.beta"),
        beta_factor=cfg.float("recon.beta_factor"),
        source_u=src_u,
        source_m=src_m,
        opts=opts,
        normalize=cfg.bool("carleman.normalize"),
    )
    result = reconstruct(data, params, sc.bounds, sc.spec, init=init, **kw)
    region = shrink_cylinder(grid, params.eps)
    ms = None
    n_starts = cfg.int("recon.multistart")
    if n_starts > 0:
        ms = multistart(data, params, sc.bounds, sc.spec, seeds=tuple(range(1, n_starts + 1)), region=region, **kw)
    return ReconRun(
        scenario=sc.name,
        delta=delta,
        seed=seed,
        lam=params.lam,
        delta0=delta0,
        gate_overridden=bool(over and delta > 0),
        error_u=norm_h21_cylinder(result.u - u_ex, region),
        error_m=norm_h21_cylinder(result.m - m_ex, region),
        result=result,
        params=params,
        multistart=ms,
    )


# uniqueness ------------------------------------------------------------------


@dataclass
class FloorEstimate:
    """Spatial discretization error of the forward solver at the scenario's spatial resolution."""

    value: float
    error_coarse: float
    error_fine: float
    nt_coarse: int
    nt_fine: int
    method: str = "time-extrapolated forward error, H21 on the shrunken cylinder"

    def to_dict(self) -> dict:
        return asdict(self)


def _forward_h21_error(sc: Scenario, grid: Grid, eps: float, theta: float) -> float:
    sol = picard_solve(sc.forward_problem(grid), theta=theta, tol=1e-12, max_iters=500)
    u, m = sc.exact(grid)
    region = shrink_cylinder(grid, eps)
    return norm_h21_cylinder(sol.u - u, region) + norm_h21_cylinder(sol.m - m, region)


def discretization_floor(sc: Scenario, eps: float, theta: float = 0.5) -> FloorEstimate:
    """Manufactured-solution error of the forward solver with the time error extrapolated away.

    The scheme is first order in time, so two runs with time steps in ratio
    4 on the scenario's spatial grid give ``E_space ~ (4 E_fine - E_coarse) / 3``.
    """
    nx1 = sc.counts["nx1"]
    nx2 = sc.counts.get("nx2")
    nt_c, nt_f = 10 * (nx1 - 1) + 1, 40 * (nx1 - 1) + 1
    e_c = _forward_h21_error(sc, sc.grid(nx1, nt_c, nx2), eps, theta)
    e_f = _forward_h21_error(sc, sc.grid(nx1, nt_f, nx2), eps, theta)
    value = (4.0 * e_f - e_c) / 3.0
    if value <= 0:
        value = e_f  # extrapolation unreliable; fall back to the finest error
    return FloorEstimate(float(value), e_c, e_f, nt_c, nt_f)


@dataclass
class UniquenessResult:
    passed: bool
    error: float
    floor: FloorEstimate
    factor: float
    corrupt_delta: float
    run: ReconRun

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "error": self.error,
            "floor": self.floor.to_dict(),
            "factor": self.factor,
            "ratio_to_floor": self.error / self.floor.value,
            "corrupt_delta": self.corrupt_delta,
            "run": self.run.to_dict(),
        }


def run_uniqueness_check(
    cfg: Config, eps: float | None = None, corrupt_delta: float = 0.0, floor: FloorEstimate | None = None
) -> UniquenessResult:
    """Exact-data reconstruction from zero; pass iff its error is within ``factor`` times the floor.

    ``corrupt_delta > 0`` injects noise while still labelling the run as
    exact data; it is the negative control and should fail.
    """
    if eps is not None:
        cfg = cfg.with_overrides({"carleman.eps": repr(float(eps))})
    cfg = cfg.with_overrides({"recon.init": "zero"})
    sc = scenario_from(cfg)
    grid = sc.grid()
    eps = eps_from(cfg, grid)
    floor = floor or discretization_floor(sc, eps, cfg.float("forward.theta"))
    data = perturb_to_delta(sc.cauchy_data(grid), corrupt_delta, cfg.int("run.seed"))
    run = run_reconstruction(cfg, delta=0.0, data=data)
    factor = cfg.float("uniqueness.factor")
    return UniquenessResult(run.error <= factor * floor.value, run.error, floor, factor, corrupt_delta, run)


# noise sweep -------------------------------------------------------------------


@dataclass
class StabilityReport:
    scenario: str
    eps: float
    rho_theoretical: float
    c2: float
    delta_grid: list
    errors: list
    errors_u: list
    errors_m: list
    lambdas: list
    gate_overridden: list
    floor: float | None
    fit_window: list
    fitted_slope: float | None
    slope_tolerance: float
    monotone: bool
    passed: bool
    flags: list = field(default_factory=list)
    runs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def rows(self) -> list[list]:
        return [
            [d, e, eu, em, lam, int(w), int(g)]
            for d, e, eu, em, lam, w, g in zip(
                self.delta_grid, self.errors, self.errors_u, self.errors_m, self.lambdas, self.fit_window, self.gate_overridden
            )
        ]


SWEEP_COLUMNS = ("delta", "error", "error_u", "error_m", "lambda", "in_fit_window", "gate_overridden")


def fit_slope(deltas, errors) -> float:
    """Least-squares slope of ln(error) against ln(delta)."""
    return float(np.polyfit(np.log(deltas), np.log(errors), 1)[0])


def run_stability_sweep(cfg: Config, delta_grid=None, eps: float | None = None, seeds=None) -> StabilityReport:
    """Reconstruct at each noise level and fit the log-log error slope.

    Noise levels above the lambda gate are run when
    ``sweep.allow_gate_override`` is set and flagged per run. A zero level is
    routed to the exact-data floor and never enters the fit. The fit uses
    levels whose error exceeds ``sweep.floor_factor`` times that floor; with
    fewer than two such levels every positive level is used and the report
    says so.
    """
    if eps is not None:
        cfg = cfg.with_overrides({"carleman.eps": repr(float(eps))})
    sc = scenario_from(cfg)
    grid = sc.grid()
    eps = eps_from(cfg, grid)
    deltas = list(delta_grid if delta_grid is not None else cfg.floats("sweep.deltas"))
    seeds = list(seeds) if seeds is not None else [cfg.int("run.seed")]
    allow = cfg.bool("sweep.allow_gate_override")
    flags: list[str] = []
    positive = sorted({float(d) for d in deltas if d > 0}, reverse=True)
    if len(positive) != len([d for d in deltas if d > 0]):
        raise ValueError("delta grid contains duplicates")
    if any(d < 0 for d in deltas):
        raise ValueError("delta grid contains negative values")

    floor_run = run_reconstruction(cfg, delta=0.0, seed=seeds[0])
    floor = floor_run.error
    runs = [floor_run.to_dict()]
    errors, errors_u, errors_m, lambdas, over = [], [], [], [], []
    jobs = [(delta, s) for delta in positive for s in seeds]
    # independent reconstructions; map() keeps grid order so output does not depend on workers
    with ThreadPoolExecutor(max_workers=max(1, cfg.int("sweep.workers"))) as pool:
        done = list(pool.map(lambda job: run_reconstruction(cfg, delta=job[0], seed=job[1], allow_gate_override=allow), jobs))
    for k, delta in enumerate(positive):
        per_seed = done[k * len(seeds) : (k + 1) * len(seeds)]
        for r in per_seed:
            runs.append(r.to_dict())
            if not r.result.converged:
                flags.append(f"reconstruction_flagged(delta={delta:g}, seed={r.seed}, status={r.result.status})")
        errors_u.append(float(np.mean([r.error_u for r in per_seed])))
        errors_m.append(float(np.mean([r.error_m for r in per_seed])))
        errors.append(errors_u[-1] + errors_m[-1])
        lambdas.append(per_seed[0].lam)
        over.append(per_seed[0].gate_overridden)

    factor = cfg.float("sweep.floor_factor")
    window = [e > factor * floor for e in errors]
    slope = None
    if len(positive) < 2:
        flags.append("insufficient_grid")
    else:
        if sum(window) < 2:
            flags.append("fit_window_fallback")
            window = [True] * len(positive)
        idx = [i for i, w in enumerate(window) if w]
        slope = fit_slope([positive[i] for i in idx], [errors[i] for i in idx])
    slack = cfg.float("sweep.monotone_slack")
    monotone = all(errors[i + 1] <= slack * errors[i] for i in range(len(errors) - 1))
    tol = cfg.float("sweep.slope_tolerance")
    r = rho(grid.domain.a, grid.domain.b)
    passed = slope is not None and slope >= r - tol and monotone
    params = CarlemanParams.from_domain(grid.domain, lambdas[0] if lambdas else 1.0, eps)
    return StabilityReport(
        scenario=sc.name,
        eps=eps,
        rho_theoretical=r,
        c2=params.c2,
        delta_grid=positive,
        errors=errors,
        errors_u=errors_u,
        errors_m=errors_m,
        lambdas=lambdas,
        gate_overridden=over,
        floor=floor,
        fit_window=window,
        fitted_slope=slope,
        slope_tolerance=tol,
        monotone=monotone,
        passed=bool(passed),
        flags=flags,
        runs=runs,
    )
