"""Command-line entry point.

Exit codes: 0 when the run passes its own check, 1 when the experiment
fails, 2 for usage or configuration errors. Every subcommand writes a
``manifest.json`` (config hash, seed, backend, library versions) next to
its outputs. Output directories default to ``$MFGCAUCHY_OUT/<subcommand>``
(``runs/<subcommand>`` when the variable is unset).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import io
from .carleman import BACKWARD, FORWARD
from .config import Config, ConfigError
from .cwf import DeltaGateError
from .experiments import (
    SWEEP_COLUMNS,
    carleman_symmetry,
    run_carleman,
    run_forward,
    run_reconstruction,
    run_stability_sweep,
    run_uniqueness_check,
    scenario_from,
)
from .expr import ExpressionError

logger = logging.getLogger("mfgcauchy")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CELL_COLUMNS = (
    "member",
    "lam",
    "lhs",
    "time",
    "hessian",
    "lower",
    "boundary_deficit",
    "endpoint_deficit",
    "denominator",
    "ratio",
    "skipped",
)


def _float_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="flat key = value config file")
    src.add_argument("--scenario", choices=("S1", "S2", "S3"), help="built-in scenario (default S1)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="overrides run.seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgcauchy", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", help="solve the forward system and write fields and lateral data")
    _common(p)

    p = sub.add_parser("verify-carleman", help="tabulate the weighted inequality over a test family")
    _common(p)
    p.add_argument("--theorem", choices=(FORWARD, BACKWARD, "both"), default=None)
    p.add_argument("--lambdas", type=_float_list, help="comma-separated lambda grid")
    p.add_argument("--max-spread", type=float, default=10.0, help="allowed max/min of the family-minimum ratio")

    p = sub.add_parser("reconstruct", help="recover (u, m) from lateral Cauchy data")
    _common(p)
    p.add_argument("--data", type=Path, help="Cauchy data CSV or JSON (default: the scenario's own data)")
    p.add_argument("--delta", type=float, help="noise level added to the scenario data (overrides recon.delta)")

    p = sub.add_parser("stability-sweep", help="reconstruct over a noise grid and fit the log-log slope")
    _common(p)
    p.add_argument("--deltas", type=_float_list, help="noise levels (overrides sweep.deltas)")
    p.add_argument("--eps", type=float, help="time margin of the shrunken cylinder")
    p.add_argument("--seeds", type=lambda s: [int(v) for v in s.split(",")], help="noise seeds averaged per level")

    p = sub.add_parser("uniqueness-check", help="exact-data reconstruction against the discretization floor")
    _common(p)
    p.add_argument("--eps", type=float)
    p.add_argument("--corrupt", type=float, default=0.0, help="inject this much noise as a negative control")

    p = sub.add_parser("report", help="collect result files under a directory into one summary")
    p.add_argument("--runs", type=Path, required=True, help="directory searched recursively for results")
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _load_config(args) -> Config:
    if getattr(args, "config", None):
        cfg = Config.load(args.config)
    else:
        cfg = Config.builtin(getattr(args, "scenario", None) or "S1")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    return cfg.with_overrides(overrides) if overrides else cfg


def _outdir(args) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get("MFGCAUCHY_OUT", "runs")) / args.command


def _finish(outdir: Path, args, cfg: Config | None, passed: bool, extra: dict | None = None) -> int:
    if cfg is not None:
        io.write_text_atomic(outdir / "config.resolved", cfg.canonical_text())
        io.write_manifest(outdir, args.command, cfg.digest(), cfg.int("run.seed"), {"passed": passed, **(extra or {})})
    print(f"{args.command}: {'PASS' if passed else 'FAIL'} -> {outdir}")
    return EXIT_PASS if passed else EXIT_FAIL


# subcommands -----------------------------------------------------------------


def cmd_forward(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    run = run_forward(cfg)
    io.write_fields_csv(out / "fields.csv", run.solution.u, run.solution.m)
    io.write_cauchy_csv(out / "cauchy.csv", run.data)
    io.write_cauchy_json(out / "cauchy.json", run.data)
    summary = run.to_dict()
    io.write_json(out / "forward.json", summary)
    return _finish(out, args, cfg, bool(run.solution.converged and run.box["ok"]))


def cmd_verify_carleman(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    theorem = args.theorem or cfg["carleman.theorem"]
    lambdas = args.lambdas or cfg.floats("carleman.lambdas")
    reports = {}
    extra = {}
    if theorem == "both":
        sym = carleman_symmetry(cfg, lambdas)
        reports = {FORWARD: sym.forward, BACKWARD: sym.backward_reversed}
        extra["reversal_mismatch"] = sym.mismatch
    else:
        reports = {theorem: run_carleman(cfg, theorem, lambdas)}
    passed = True
    for th, rep in reports.items():
        tag = th.replace(".", "_")
        io.write_json(out / f"carleman_{tag}.json", rep.to_dict())
        io.write_csv(out / f"carleman_{tag}.csv", CELL_COLUMNS, ([c.row()[k] for k in CELL_COLUMNS] for c in rep.cells))
        ok = (
            rep.C_star is not None
            and rep.C_star > 0
            and rep.positive_beyond_lambda0()
            and rep.min_ratio_spread() < args.max_spread
            and rep.endpoint_valid
        )
        extra[f"passed_{tag}"] = ok
        passed &= ok
    if "reversal_mismatch" in extra:
        passed &= extra["reversal_mismatch"] <= 1e-10
    return _finish(out, args, cfg, passed, extra)


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    data = None
    if args.data is not None:
        grid = scenario_from(cfg).grid()
        data = io.read_cauchy(args.data, grid)
        if data.grid != grid:
            raise ConfigError("data grid does not match the configured grid")
    run = run_reconstruction(cfg, delta=args.delta, data=data, allow_gate_override=True)
    io.write_fields_csv(out / "fields.csv", run.result.u, run.result.m)
    io.write_json(out / "reconstruction.json", run.to_dict())
    return _finish(out, args, cfg, bool(run.result.converged))


def cmd_stability_sweep(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    rep = run_stability_sweep(cfg, args.deltas, args.eps, args.seeds)
    io.write_json(out / "stability.json", rep.to_dict())
    io.write_csv(out / "stability.csv", SWEEP_COLUMNS, rep.rows())
    return _finish(out, args, cfg, rep.passed)


def cmd_uniqueness_check(args) -> int:
    cfg = _load_config(args)
    out = _outdir(args)
    res = run_uniqueness_check(cfg, args.eps, args.corrupt)
    io.write_json(out / "uniqueness.json", res.to_dict())
    return _finish(out, args, cfg, res.passed)


_RESULT_FILES = {
    "forward.json": "forward",
    "stability.json": "stability-sweep",
    "uniqueness.json": "uniqueness-check",
    "reconstruction.json": "reconstruct",
}


def cmd_report(args) -> int:
    out = _outdir(args)
    rows = []
    for manifest in sorted(args.runs.rglob("manifest.json")):
        if out.resolve() in manifest.resolve().parents:
            continue
        meta = io.read_json(manifest)
        rows.append(
            {
                "run": str(manifest.parent.relative_to(args.runs)),
                "command": meta.get("command"),
                "passed": bool(meta.get("passed")),
                "config_hash": meta.get("config_hash"),
                "seed": meta.get("seed"),
            }
        )
    sweeps = []
    for path in sorted(args.runs.rglob("stability.json")):
        rep = io.read_json(path)
        sweeps.append(
            {
                "run": str(path.parent.relative_to(args.runs)),
                "rho": rep["rho_theoretical"],
                "c2": rep["c2"],
                "eps": rep["eps"],
                "lambdas": rep["lambdas"],
                "fitted_slope": rep["fitted_slope"],
                "passed": rep["passed"],
            }
        )
    summary = {"runs": rows, "sweeps": sweeps, "all_passed": bool(rows) and all(r["passed"] for r in rows)}
    io.write_json(out / "report.json", summary)
    io.write_csv(
        out / "report.csv",
        ("run", "command", "passed", "config_hash", "seed"),
        ([r["run"], r["command"], int(r["passed"]), r["config_hash"], r["seed"]] for r in rows),
    )
    print(f"report: {len(rows)} runs, {'all passed' if summary['all_passed'] else 'some failed'} -> {out}")
    return EXIT_PASS if summary["all_passed"] else EXIT_FAIL


COMMANDS = {
    "forward": cmd_forward,
    "verify-carleman": cmd_verify_carleman,
    "reconstruct": cmd_reconstruct,
    "stability-sweep": cmd_stability_sweep,
    "uniqueness-check": cmd_uniqueness_check,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ExpressionError, DeltaGateError, FileNotFoundError, ValueError) as exc:
        # bad input of any kind: configuration, expressions, data files, parameter ranges
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
