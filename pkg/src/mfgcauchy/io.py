"""CSV/JSON persistence with exact float round trips and atomic writes.

Floats are written with ``repr``, the shortest string that parses back to
the same double, so reading a file reproduces the arrays bit for bit.

Frozen schemas
--------------
Cauchy data CSV: ``face, xbar_index, xbar, t_index, t, g0, g1, p0, p1``.
Rows run over faces in grid order, then time, then the tangential index.
``xbar`` is empty when ``n = 1``.

Fields CSV: ``x1, xbar, t, u, m``; rows in C order of the ``(nt, nx1[, nx2])``
array, ``xbar`` empty when ``n = 1``.

Cauchy data JSON: ``{"grid": {...}, "faces": {label: {g0: [[...]], ...}}}``.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import platform
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import backend
from .fields import QUANTITIES, CauchyData, ScalarField
from .grid import DomainSpec, Grid, build_grid

CAUCHY_COLUMNS = ("face", "xbar_index", "xbar", "t_index", "t", "g0", "g1", "p0", "p1")
FIELD_COLUMNS = ("x1", "xbar", "t", "u", "m")


def fmt(x: float) -> str:
    return repr(float(x))


def write_text_atomic(path: str | Path, text: str) -> Path:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    """Deterministic JSON: sorted keys, non-finite floats as ``null``."""
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: str | Path, obj) -> Path:
    return write_text_atomic(path, dumps(obj))


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


def write_csv(path: str | Path, header, rows) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return write_text_atomic(path, buf.getvalue())


# grids ---------------------------------------------------------------------


def grid_metadata(grid: Grid) -> dict:
    d = grid.domain
    return {
        "n": d.n,
        "a": d.a,
        "b": d.b,
        "T": d.T,
        "alpha": d.alpha,
        "a_i": list(d.a_i),
        "nx1": grid.nx1,
        "nxi": list(grid.nxi),
        "nt": grid.nt,
    }


def grid_from_metadata(meta: dict) -> Grid:
    spec = DomainSpec(
        n=int(meta["n"]), a=meta["a"], b=meta["b"], T=meta["T"], alpha=meta["alpha"], a_i=tuple(meta["a_i"])
    )
    return build_grid(spec, int(meta["nx1"]), int(meta["nt"]), tuple(int(v) for v in meta["nxi"]))


# Cauchy data ---------------------------------------------------------------


def cauchy_rows(d: CauchyData):
    grid = d.grid
    for label, face in grid.faces.items():
        arrs = [d.faces[label][q] for q in QUANTITIES]
        coords = face.tangential_coords
        for it, t in enumerate(grid.t):
            for j in range(face.n_tangential):
                xbar = fmt(coords[j]) if len(coords) and grid.n > 1 else ""
                yield [label, j, xbar, it, fmt(t), *(fmt(a[it, j]) for a in arrs)]


def write_cauchy_csv(path: str | Path, d: CauchyData) -> Path:
    return write_csv(path, CAUCHY_COLUMNS, cauchy_rows(d))


def read_cauchy_csv(path: str | Path, grid: Grid) -> CauchyData:
    faces = {label: {q: np.full((grid.nt, f.n_tangential), np.nan) for q in QUANTITIES} for label, f in grid.faces.items()}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CAUCHY_COLUMNS:
            raise ValueError(f"{path}: expected columns {CAUCHY_COLUMNS}, got {reader.fieldnames}")
        for row in reader:
            label = row["face"]
            if label not in faces:
                raise ValueError(f"{path}: unknown face {label!r}")
            it, j = int(row["t_index"]), int(row["xbar_index"])
            for q in QUANTITIES:
                faces[label][q][it, j] = float(row[q])
    for label in faces:
        for q in QUANTITIES:
            if np.isnan(faces[label][q]).any():
                raise ValueError(f"{path}: face {label} quantity {q} is incomplete")
    return CauchyData(grid, faces)


def cauchy_bundle(d: CauchyData) -> dict:
    return {
        "grid": grid_metadata(d.grid),
        "faces": {label: {q: d.faces[label][q].tolist() for q in QUANTITIES} for label in d.grid.faces},
    }


def write_cauchy_json(path: str | Path, d: CauchyData) -> Path:
    return write_json(path, cauchy_bundle(d))


def read_cauchy_json(path: str | Path) -> CauchyData:
    bundle = read_json(path)
    grid = grid_from_metadata(bundle["grid"])
    faces = {
        label: {q: np.array(bundle["faces"][label][q], dtype=float).reshape(grid.nt, -1) for q in QUANTITIES}
        for label in grid.faces
    }
    return CauchyData(grid, faces)


def read_cauchy(path: str | Path, grid: Grid | None = None) -> CauchyData:
    """Dispatch on suffix; CSV needs the grid, JSON carries its own."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        return read_cauchy_json(path)
    if grid is None:
        raise ValueError("reading Cauchy data from CSV needs a grid")
    return read_cauchy_csv(path, grid)


# fields --------------------------------------------------------------------


def write_fields_csv(path: str | Path, u: ScalarField, m: ScalarField) -> Path:
    u._same(m)
    grid = u.grid
    t, *xs = grid.mesh()
    x1 = xs[0].ravel()
    xbar = xs[1].ravel() if grid.n == 2 else None
    tt = t.ravel()
    uu, mm = u.flat, m.flat
    rows = (
        [fmt(x1[i]), fmt(xbar[i]) if xbar is not None else "", fmt(tt[i]), fmt(uu[i]), fmt(mm[i])]
        for i in range(grid.size)
    )
    return write_csv(path, FIELD_COLUMNS, rows)


def read_fields_csv(path: str | Path, grid: Grid) -> tuple[ScalarField, ScalarField]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != FIELD_COLUMNS:
            raise ValueError(f"{path}: expected columns {FIELD_COLUMNS}, got {reader.fieldnames}")
        rows = list(reader)
    if len(rows) != grid.size:
        raise ValueError(f"{path}: {len(rows)} rows, grid has {grid.size} nodes")
    u = np.array([float(r["u"]) for r in rows])
    m = np.array([float(r["m"]) for r in rows])
    return ScalarField(grid, u), ScalarField(grid, m)


# manifests -----------------------------------------------------------------


def versions() -> dict:
    import scipy
    import sympy

    out = {
        "mfgcauchy": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "sympy": sympy.__version__,
    }
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:  # pragma: no cover
        out["numba"] = None
    return out


def manifest(command: str, config_hash: str, seed: int, extra: dict | None = None) -> dict:
    return {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "backend": backend(),
        "versions": versions(),
        **(extra or {}),
    }


def write_manifest(outdir: str | Path, command: str, config_hash: str, seed: int, extra: dict | None = None) -> Path:
    return write_json(Path(outdir) / "manifest.json", manifest(command, config_hash, seed, extra))
