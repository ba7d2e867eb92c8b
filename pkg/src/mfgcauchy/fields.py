"""Space-time fields, discrete derivatives, Sobolev-type norms and lateral traces."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid
from .ops import face_norm_blocks, face_operators, grid_operators

QUANTITIES = ("g0", "g1", "p0", "p1")
# Norm used for each lateral quantity: Dirichlet traces in H^{2,1}, Neumann in H^{1,0}.
QUANTITY_NORM = {"g0": "h21", "g1": "h10", "p0": "h21", "p1": "h10"}


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise ValueError(f"field has {vals.size} values, grid has {self.grid.size} nodes")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: Grid, fn) -> ScalarField:
        """Sample ``fn(t, x1[, x2])`` on every node."""
        vals = np.broadcast_to(fn(*grid.mesh()), grid.shape)
        return cls(grid, np.array(vals, dtype=float))

    @classmethod
    def zeros(cls, grid: Grid) -> ScalarField:
        return cls(grid, np.zeros(grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def _same(self, other: ScalarField):
        if other.grid != self.grid:
            raise ValueError("fields live on different grids")

    def __add__(self, other):
        if isinstance(other, ScalarField):
            self._same(other)
            return ScalarField(self.grid, self.values + other.values)
        return ScalarField(self.grid, self.values + other)

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            self._same(other)
            return ScalarField(self.grid, self.values - other.values)
        return ScalarField(self.grid, self.values - other)

    def __mul__(self, s):
        if isinstance(s, ScalarField):
            self._same(s)
            return ScalarField(self.grid, self.values * s.values)
        return ScalarField(self.grid, self.values * s)

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def time_reversed(self) -> ScalarField:
        return ScalarField(self.grid, self.values[::-1].copy())


def _apply(mat, f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, (mat @ f.flat).reshape(f.grid.shape))


def d_t(f: ScalarField) -> ScalarField:
    return _apply(grid_operators(f.grid).dt, f)


def grad(f: ScalarField) -> list[ScalarField]:
    return [_apply(d, f) for d in grid_operators(f.grid).dx]


def hessian(f: ScalarField) -> list[list[ScalarField]]:
    ops = grid_operators(f.grid)
    n = f.grid.n
    cache = {key: _apply(mat, f) for key, mat in ops.dxx.items()}
    return [[cache[(min(i, j), max(i, j))] for j in range(n)] for i in range(n)]


def laplacian(f: ScalarField) -> ScalarField:
    return _apply(grid_operators(f.grid).laplacian, f)


def h21_density(f: ScalarField) -> np.ndarray:
    """Pointwise ``f^2 + |grad f|^2 + |D^2 f|^2 + f_t^2``."""
    ops = grid_operators(f.grid)
    x = f.flat
    dens = x**2 + (ops.dt @ x) ** 2
    for d in ops.dx:
        dens += (d @ x) ** 2
    for _, mat in ops.hessian_pairs():
        dens += (mat @ x) ** 2
    return dens.reshape(f.grid.shape)


def norm_h21_cylinder(f: ScalarField, region: np.ndarray | None = None) -> float:
    """Discrete H^{2,1} norm over the nodes selected by the boolean ``region`` mask."""
    if region is None:
        region = np.ones(f.grid.shape, dtype=bool)
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("empty region")
    dens = h21_density(f)
    return float(np.sqrt(np.sum(dens[region] * f.grid.trapezoid_weights[region])))


def norm_h2_cylinder(f: ScalarField) -> float:
    """Full space-time H^2 norm over the closed cylinder (includes f_tt and f_{t x_i})."""
    ops = grid_operators(f.grid)
    x = f.flat
    dt = ops.dt @ x
    dens = x**2 + dt**2 + (ops.dt @ dt) ** 2
    for d in ops.dx:
        dx = d @ x
        dens += dx**2 + 2.0 * (ops.dt @ dx) ** 2
    for _, mat in ops.hessian_pairs():
        dens += (mat @ x) ** 2
    return float(np.sqrt(np.sum(dens * f.grid.trapezoid_weights.ravel())))


def slice_h1_norm(f: ScalarField, time_index: int) -> float:
    """Spatial H^1 norm of one time slice."""
    grid = f.grid
    ops = grid_operators(grid)
    x = f.flat
    dens = x**2
    for d in ops.dx:
        dens = dens + (d @ x) ** 2
    dens = dens.reshape(grid.shape)[time_index]
    return float(np.sqrt(np.sum(dens * grid.spatial_weights)))


@dataclass(eq=False)
class CauchyData:
    """Lateral Dirichlet and Neumann traces of ``u`` and ``m``.

    ``faces[label][q]`` is an array shaped ``(nt, n_tangential)`` for
    ``q`` in ``("g0", "g1", "p0", "p1")``.
    """

    grid: Grid
    faces: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        expected = self.grid.faces
        if set(self.faces) != set(expected):
            raise ValueError(f"face labels {sorted(self.faces)} do not match grid faces {sorted(expected)}")
        for label, face in expected.items():
            shape = (self.grid.nt, face.n_tangential)
            for q in QUANTITIES:
                arr = self.faces[label].get(q)
                if arr is None:
                    raise ValueError(f"face {label} lacks {q}")
                arr = np.asarray(arr, dtype=float)
                if arr.shape != shape:
                    raise ValueError(f"face {label} {q}: shape {arr.shape}, expected {shape}")
                self.faces[label][q] = arr

    def vector(self, q: str) -> np.ndarray:
        """All faces of quantity ``q`` concatenated in grid face order."""
        return np.concatenate([self.faces[label][q].ravel() for label in self.grid.faces])

    @classmethod
    def from_vectors(cls, grid: Grid, vectors: dict[str, np.ndarray]) -> CauchyData:
        faces = {label: {} for label in grid.faces}
        for q in QUANTITIES:
            offset = 0
            for label, face in grid.faces.items():
                size = grid.nt * face.n_tangential
                faces[label][q] = np.array(vectors[q][offset : offset + size]).reshape(grid.nt, face.n_tangential)
                offset += size
        return cls(grid, faces)

    def copy(self) -> CauchyData:
        return CauchyData(self.grid, {lab: {q: a.copy() for q, a in d.items()} for lab, d in self.faces.items()})

    def __sub__(self, other: CauchyData) -> CauchyData:
        if other.grid != self.grid:
            raise ValueError("Cauchy data on different grids")
        return CauchyData(
            self.grid,
            {lab: {q: self.faces[lab][q] - other.faces[lab][q] for q in QUANTITIES} for lab in self.faces},
        )

    def equals(self, other: CauchyData) -> bool:
        return other.grid == self.grid and all(
            np.array_equal(self.faces[lab][q], other.faces[lab][q]) for lab in self.faces for q in QUANTITIES
        )


def lateral_sq_norm(grid: Grid, vec: np.ndarray, kind: str, faces: tuple[str, ...] | None = None) -> float:
    """Squared H^{2,1}(S_T) or H^{1,0}(S_T) norm of a concatenated face vector."""
    total = 0.0
    offset = 0
    for label, fop in face_operators(grid).items():
        size = len(fop.weights)
        part = vec[offset : offset + size]
        offset += size
        if faces is not None and label not in faces:
            continue
        for mat in face_norm_blocks(fop, kind):
            total += float(np.sum(fop.weights * (mat @ part) ** 2))
    if offset != len(vec):
        raise ValueError(f"face vector has {len(vec)} entries, grid faces need {offset}")
    return total


def norm_lateral(d: CauchyData, which: str) -> float:
    """Norm of one lateral quantity, summing squared face norms before the root."""
    if which not in QUANTITY_NORM:
        raise ValueError(f"unknown quantity {which!r}; expected one of {QUANTITIES}")
    d.validate()
    return float(np.sqrt(lateral_sq_norm(d.grid, d.vector(which), QUANTITY_NORM[which])))


def lateral_norms(d: CauchyData) -> dict[str, float]:
    return {q: norm_lateral(d, q) for q in QUANTITIES}


def trace_vectors(u: np.ndarray, m: np.ndarray, grid: Grid) -> dict[str, np.ndarray]:
    fops = face_operators(grid)
    u = np.asarray(u).ravel()
    m = np.asarray(m).ravel()
    out = {}
    for q, src, op in (("g0", u, "restrict"), ("g1", u, "normal"), ("p0", m, "restrict"), ("p1", m, "normal")):
        out[q] = np.concatenate([getattr(f, op) @ src for f in fops.values()])
    return out


def extract_traces(u: ScalarField, m: ScalarField) -> CauchyData:
    """Dirichlet traces by restriction, Neumann traces by one-sided outward differences."""
    u._same(m)
    return CauchyData.from_vectors(u.grid, trace_vectors(u.flat, m.flat, u.grid))


def _face_noise(rng: np.random.Generator, t: np.ndarray, T: float, s: np.ndarray | None, modes: int) -> np.ndarray:
    tau = t / T
    coef = rng.standard_normal((modes, modes))
    phase_t = rng.uniform(0.0, 2.0 * np.pi, (modes, modes))
    phase_s = rng.uniform(0.0, 2.0 * np.pi, (modes, modes))
    if s is None or len(s) == 0:
        out = np.zeros((len(t), 1))
        for k in range(modes):
            out[:, 0] += coef[0, k] * np.cos(np.pi * k * tau + phase_t[0, k]) / (1.0 + k)
        return out
    xi = (s - s.min()) / max(s.max() - s.min(), 1e-300)
    out = np.zeros((len(t), len(s)))
    for j in range(modes):
        for k in range(modes):
            out += (
                coef[j, k]
                * np.cos(np.pi * k * tau + phase_t[j, k])[:, None]
                * np.cos(np.pi * j * xi + phase_s[j, k])[None, :]
                / (1.0 + j + k)
            )
    return out


def perturb_to_delta(d: CauchyData, delta: float, seed: int, modes: int = 4) -> CauchyData:
    """Add smooth seeded noise whose four lateral norms each equal ``delta``."""
    if delta < 0:
        raise ValueError(f"delta must be non-negative, got {delta}")
    if delta == 0:
        return d.copy()
    grid = d.grid
    rng = np.random.default_rng(seed)
    out = d.copy()
    for q in QUANTITIES:
        noise = {
            label: _face_noise(rng, grid.t, grid.T, face.tangential_coords, modes)
            for label, face in grid.faces.items()
        }
        vec = np.concatenate([noise[label].ravel() for label in grid.faces])
        scale = delta / np.sqrt(lateral_sq_norm(grid, vec, QUANTITY_NORM[q]))
        for label in grid.faces:
            out.faces[label][q] = d.faces[label][q] + scale * noise[label]
    return out
