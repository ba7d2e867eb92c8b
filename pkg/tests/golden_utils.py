"""Golden-output helpers shared by the CLI tests and the acceptance suite."""

from __future__ import annotations

import csv
import json
import math
import os
import shutil
from pathlib import Path

from mfgcauchy.cli import main

GOLDEN = Path(__file__).parent / "golden"
REGEN = os.environ.get("MFGCAUCHY_REGEN_GOLDEN") == "1"
SMALL = ["--set", "grid.nx1=17", "--set", "grid.nt=17"]
RTOL = 1e-8

RUNS = {
    "forward": ["forward", *SMALL],
    "verify-carleman": ["verify-carleman", "--lambdas", "5,10", *SMALL],
    "reconstruct": ["reconstruct", "--delta", "1e-3", *SMALL],
    "stability-sweep": ["stability-sweep", "--deltas", "1e-2,1e-3", *SMALL],
    "uniqueness-check": ["uniqueness-check", *SMALL],
}


def run(argv, out):
    return main([*argv, "--out", str(out)])


def close(a, b, where):
    if isinstance(a, dict):
        assert isinstance(b, dict) and sorted(a) == sorted(b), where
        for k in a:
            close(a[k], b[k], f"{where}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), where
        for i, (x, y) in enumerate(zip(a, b)):
            close(x, y, f"{where}[{i}]")
    elif isinstance(a, float) and isinstance(b, (int, float)) and not isinstance(b, bool):
        assert math.isclose(a, b, rel_tol=RTOL, abs_tol=1e-300) or (math.isnan(a) and math.isnan(b)), where
    else:
        assert a == b, where


def cell(s):
    try:
        return float(s)
    except ValueError:
        return s


def load(path: Path):
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        if path.name == "manifest.json":
            data.pop("versions")  # library versions differ between installs
        return data
    if path.suffix == ".csv":
        with open(path, newline="") as fh:
            return [[cell(c) for c in row] for row in csv.reader(fh)]
    return path.read_text()


def compare_to_golden(produced: Path, name: str) -> None:
    """Assert ``produced`` holds the same files as ``golden/<name>`` within ``RTOL``."""
    golden = GOLDEN / name
    if REGEN:
        shutil.rmtree(golden, ignore_errors=True)
        shutil.copytree(produced, golden)
    files = sorted(p.name for p in produced.iterdir())
    assert files == sorted(p.name for p in golden.iterdir()), name
    for fname in files:
        close(load(produced / fname), load(golden / fname), f"{name}/{fname}")


def same_bytes(a: Path, b: Path) -> bool:
    return sorted(p.name for p in a.iterdir()) == sorted(p.name for p in b.iterdir()) and all(
        (b / p.name).read_bytes() == p.read_bytes() for p in a.iterdir()
    )
