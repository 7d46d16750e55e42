"""Uniform 2-D grid over the (s, d) road domain.

Finite-difference operators (gradient, 5-point Laplacian with zero-flux
Neumann boundaries), bilinear off-grid sampling, and [0, 1] normalization.
Fields are stored as (n_s, n_d) arrays, axis 0 longitudinal, axis 1 lateral.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import InvalidParameterError, OutOfDomainError

__all__ = [
    "GridSpec",
    "ScalarField",
    "VectorField",
    "gradient",
    "laplacian",
    "laplacian_matrix",
    "sample_bilinear",
    "sample_bilinear_many",
    "sample_bilinear_gradient",
    "normalize",
    "field_to_csv",
    "field_from_csv",
]

# Range below which a field counts as flat and normalizes to 0.5 everywhere.
FLAT_RANGE = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Node-centered uniform grid covering [s_min, s_max] x [d_min, d_max]."""

    s_min: float = 0.0
    s_max: float = 600.0
    d_min: float = -8.0
    d_max: float = 8.0
    n_s: int = 250
    n_d: int = 20

    def __post_init__(self):
        if not (self.s_max > self.s_min and self.d_max > self.d_min):
            raise InvalidParameterError("grid bounds must satisfy max > min")
        if self.n_s < 4 or self.n_d < 4:
            raise InvalidParameterError("grid needs at least 4 points per axis")

    @property
    def ds(self) -> float:
        return (self.s_max - self.s_min) / (self.n_s - 1)

    @property
    def dd(self) -> float:
        return (self.d_max - self.d_min) / (self.n_d - 1)

    def s_coords(self) -> np.ndarray:
        return np.linspace(self.s_min, self.s_max, self.n_s)

    def d_coords(self) -> np.ndarray:
        return np.linspace(self.d_min, self.d_max, self.n_d)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(S, D) arrays of shape (n_s, n_d) with node coordinates."""
        return np.meshgrid(self.s_coords(), self.d_coords(), indexing="ij")

    def clamp_point(self, p) -> tuple[float, float]:
        """Clamp a planar point into the domain (used to freeze influence
        of vehicles that left the grid)."""
        s = min(max(float(p[0]), self.s_min), self.s_max)
        d = min(max(float(p[1]), self.d_min), self.d_max)
        return s, d


@dataclass
class ScalarField:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.spec.n_s, self.spec.n_d):
            raise InvalidParameterError(
                f"field shape {self.values.shape} does not match grid "
                f"({self.spec.n_s}, {self.spec.n_d})"
            )

    @classmethod
    def zeros(cls, spec: GridSpec) -> "ScalarField":
        return cls(spec, np.zeros((spec.n_s, spec.n_d)))

    @classmethod
    def full(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full((spec.n_s, spec.n_d), float(value)))


@dataclass
class VectorField:
    spec: GridSpec
    comp_s: np.ndarray
    comp_d: np.ndarray


def gradient(f: ScalarField) -> VectorField:
    """Central differences inside, one-sided second order on the boundary."""
    v = f.values
    gs = np.gradient(v, f.spec.ds, axis=0, edge_order=2)
    gd = np.gradient(v, f.spec.dd, axis=1, edge_order=2)
    return VectorField(f.spec, gs, gd)


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian with mirror (zero-flux) ghost values.

    The ghost value equals the boundary node value (reflection about the
    boundary face), which keeps the discrete operator symmetric and makes
    the node sum of the output vanish identically (discrete divergence
    theorem with zero flux).
    """
    v = np.pad(f.values, 1, mode="edge")
    out = (v[:-2, 1:-1] - 2.0 * v[1:-1, 1:-1] + v[2:, 1:-1]) / f.spec.ds**2
    out += (v[1:-1, :-2] - 2.0 * v[1:-1, 1:-1] + v[1:-1, 2:]) / f.spec.dd**2
    return ScalarField(f.spec, out)


@lru_cache(maxsize=8)
def laplacian_matrix(spec: GridSpec) -> sp.csr_matrix:
    """Sparse matrix form of :func:`laplacian` on flattened (row-major) fields.

    Symmetric negative semidefinite; its kernel is the constant vector.
    """

    def axis_matrix(n: int, h: float) -> sp.csr_matrix:
        main = np.full(n, -2.0)
        main[0] = main[-1] = -1.0  # mirror ghost folds into the diagonal
        off = np.ones(n - 1)
        return sp.diags([off, main, off], [-1, 0, 1]) / h**2

    ls = axis_matrix(spec.n_s, spec.ds)
    ld = axis_matrix(spec.n_d, spec.dd)
    eye_s = sp.identity(spec.n_s)
    eye_d = sp.identity(spec.n_d)
    return (sp.kron(ls, eye_d) + sp.kron(eye_s, ld)).tocsr()


def _locate(spec: GridSpec, pts: np.ndarray) -> tuple[np.ndarray, ...]:
    """Cell indices and local weights for an (n, 2) array of planar points.

    Points up to one cell outside the domain are clamped onto the boundary;
    anything farther raises OutOfDomainError.
    """
    s = pts[:, 0]
    d = pts[:, 1]
    if (
        np.any(s < spec.s_min - spec.ds)
        or np.any(s > spec.s_max + spec.ds)
        or np.any(d < spec.d_min - spec.dd)
        or np.any(d > spec.d_max + spec.dd)
    ):
        raise OutOfDomainError("sample point beyond the one-cell clamp band")
    s = np.clip(s, spec.s_min, spec.s_max)
    d = np.clip(d, spec.d_min, spec.d_max)
    fi = (s - spec.s_min) / spec.ds
    fj = (d - spec.d_min) / spec.dd
    i = np.minimum(fi.astype(int), spec.n_s - 2)
    j = np.minimum(fj.astype(int), spec.n_d - 2)
    return i, j, fi - i, fj - j


def sample_bilinear_many(f: ScalarField, pts) -> np.ndarray:
    """Bilinear interpolation at an (n, 2) array of (s, d) points."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    i, j, ts, td = _locate(f.spec, pts)
    v = f.values
    return (
        v[i, j] * (1 - ts) * (1 - td)
        + v[i + 1, j] * ts * (1 - td)
        + v[i, j + 1] * (1 - ts) * td
        + v[i + 1, j + 1] * ts * td
    )


def sample_bilinear(f: ScalarField, p) -> float:
    return float(sample_bilinear_many(f, [p])[0])


def sample_bilinear_gradient(f: ScalarField, pts) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values and the exact gradient of the bilinear interpolant.

    Returns (values, d/ds, d/dd) arrays for an (n, 2) array of points. The
    gradient is that of the interpolant itself so finite differences of
    sampled values reproduce it to machine precision within a cell.
    """
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    i, j, ts, td = _locate(f.spec, pts)
    v = f.values
    v00, v10 = v[i, j], v[i + 1, j]
    v01, v11 = v[i, j + 1], v[i + 1, j + 1]
    vals = v00 * (1 - ts) * (1 - td) + v10 * ts * (1 - td) + v01 * (1 - ts) * td + v11 * ts * td
    gs = ((v10 - v00) * (1 - td) + (v11 - v01) * td) / f.spec.ds
    gd = ((v01 - v00) * (1 - ts) + (v11 - v10) * ts) / f.spec.dd
    return vals, gs, gd


def normalize(f: ScalarField) -> ScalarField:
    """Affine rescale to [0, 1]; a flat field maps to 0.5 everywhere."""
    lo = float(f.values.min())
    hi = float(f.values.max())
    if hi - lo < FLAT_RANGE:
        return ScalarField.full(f.spec, 0.5)
    return ScalarField(f.spec, (f.values - lo) / (hi - lo))


def field_to_csv(f: ScalarField, path) -> None:
    """Write the snapshot format: header ``s,d,value``, row-major in s then d,
    9 significant digits."""
    s = f.spec.s_coords()
    d = f.spec.d_coords()
    with open(path, "w", newline="") as fh:
        fh.write("s,d,value\n")
        for i in range(f.spec.n_s):
            for j in range(f.spec.n_d):
                fh.write(f"{s[i]:.9g},{d[j]:.9g},{f.values[i, j]:.9g}\n")


def field_from_csv(path) -> ScalarField:
    """Read a snapshot written by :func:`field_to_csv`."""
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    s = np.unique(data[:, 0])
    d = np.unique(data[:, 1])
    spec = GridSpec(float(s[0]), float(s[-1]), float(d[0]), float(d[-1]), len(s), len(d))
    values = data[:, 2].reshape(len(s), len(d))
    return ScalarField(spec, values)
