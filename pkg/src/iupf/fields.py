"""Benefit and risk field construction.

Style-weighted exponential sources assembled from the population measure,
then smoothed into H^1 by solving the screened Poisson equation
``-lap F + tikhonov*F = source`` with zero-flux boundaries via conjugate
gradients on the SPD discrete operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter

from .errors import ConvergenceError, InvalidParameterError
from .fieldgrid import GridSpec, ScalarField, laplacian_matrix

__all__ = [
    "FieldParams",
    "FieldPair",
    "kernel_G",
    "kernel_H",
    "benefit_source",
    "risk_source",
    "solve_screened_poisson",
    "solve_field_pair",
]


@dataclass(frozen=True)
class FieldParams:
    """Solver and normalization settings for the two elliptic problems.

    The decay lengths live in StyleParameters; ``tikhonov_*`` are the
    quadratic regularization weights of the variational energies (separate
    quantities, despite the shared symbol in the source material).
    """

    tikhonov_B: float = 1.0
    tikhonov_R: float = 1.0
    v_max: float = 33.3
    cg_tol: float = 1e-8
    cg_max_iter: int = 5000
    # Optional Gaussian pre-smoothing of the sources using the style spread
    # parameters (sigma_B / sigma_R, in meters). Disabled by default.
    use_spreading_smoothing: bool = False

    def __post_init__(self):
        if not (self.tikhonov_B > 0 and self.tikhonov_R > 0):
            raise InvalidParameterError("tikhonov weights must be positive")
        if not (0 < self.cg_tol < 1):
            raise InvalidParameterError("cg_tol must lie in (0, 1)")
        if not self.v_max > 0:
            raise InvalidParameterError("v_max must be positive")


@dataclass
class FieldPair:
    benefit: ScalarField
    risk: ScalarField
    solve_iterations: tuple
    residuals: tuple


def kernel_G(r: float, lam: float) -> float:
    """Exponential proximity kernel exp(-r/lambda)."""
    return float(np.exp(-np.asarray(r, dtype=float) / lam))


def kernel_H(r: float, v: float, lam: float, v_max: float) -> float:
    """Proximity kernel amplified by relative speed: exp(-r/lam)*(1+v^2/v_max^2)."""
    return float(np.exp(-np.asarray(r, dtype=float) / lam) * (1.0 + (v / v_max) ** 2))


def _atom_distances(grid: GridSpec, atom_state) -> np.ndarray:
    S, D = grid.mesh()
    s0, d0 = grid.clamp_point(atom_state.position())
    return np.hypot(S - s0, D - d0)


def _smooth(values: np.ndarray, grid: GridSpec, sigma_m: float) -> np.ndarray:
    return gaussian_filter(values, sigma=(sigma_m / grid.ds, sigma_m / grid.dd), mode="nearest")


def benefit_source(measures_by_style: dict, grid: GridSpec, style_params: dict,
                   field_params: FieldParams | None = None) -> ScalarField:
    """Style-amplified exponential source for the benefit solve.

    source(r) = sum_styles alpha_B * sum_atoms w * exp(-|pi(x)-r| / lambda_B)
    """
    out = np.zeros((grid.n_s, grid.n_d))
    for label, measure in measures_by_style.items():
        if measure.is_empty():
            continue
        p = style_params[label]
        contribution = np.zeros_like(out)
        for atom_state, weight, _style in measure.atoms:
            contribution += weight * np.exp(-_atom_distances(grid, atom_state) / p.lambda_B)
        if field_params is not None and field_params.use_spreading_smoothing:
            contribution = _smooth(contribution, grid, p.sigma_B)
        out += p.alpha_B * contribution
    return ScalarField(grid, out)


def risk_source(measures_by_style: dict, grid: GridSpec, style_params: dict,
                field_params: FieldParams | None = None) -> ScalarField:
    """Risk source with speed amplification from each atom's planar velocity."""
    v_max = (field_params or FieldParams()).v_max
    out = np.zeros((grid.n_s, grid.n_d))
    for label, measure in measures_by_style.items():
        if measure.is_empty():
            continue
        p = style_params[label]
        contribution = np.zeros_like(out)
        for atom_state, weight, _style in measure.atoms:
            speed = float(np.hypot(atom_state.s_dot, atom_state.d_dot))
            boost = 1.0 + (speed / v_max) ** 2
            contribution += weight * boost * np.exp(-_atom_distances(grid, atom_state) / p.lambda_R)
        if field_params is not None and field_params.use_spreading_smoothing:
            contribution = _smooth(contribution, grid, p.sigma_R)
        out += p.alpha_R * contribution
    return ScalarField(grid, out)


def _cg(op: sp.spmatrix, b: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, int, float]:
    """Plain conjugate gradients; returns (solution, iterations, rel. residual)."""
    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    for it in range(1, max_iter + 1):
        Ap = op @ p
        alpha = rs / float(p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * b_norm:
            return x, it, np.sqrt(rs_new) / b_norm
        p = r + (rs_new / rs) * p
        rs = rs_new
    return x, max_iter, np.sqrt(rs) / b_norm


def solve_screened_poisson(source: ScalarField, tikhonov: float,
                           params: FieldParams | None = None) -> ScalarField:
    """Solve -lap F + tikhonov*F = source with zero-flux Neumann boundaries."""
    field, _, _ = solve_screened_poisson_info(source, tikhonov, params)
    return field


def solve_screened_poisson_info(source: ScalarField, tikhonov: float,
                                params: FieldParams | None = None):
    """Like :func:`solve_screened_poisson` but also returns (iterations, residual)."""
    params = params or FieldParams()
    if not tikhonov > 0:
        raise InvalidParameterError("tikhonov weight must be positive")
    grid = source.spec
    b = source.values.ravel()
    if not np.any(b):
        return ScalarField.zeros(grid), 0, 0.0
    op = tikhonov * sp.identity(grid.n_s * grid.n_d, format="csr") - laplacian_matrix(grid)
    x, iters, residual = _cg(op, b, params.cg_tol, params.cg_max_iter)
    if residual > params.cg_tol:
        raise ConvergenceError(
            f"screened Poisson CG stalled at relative residual {residual:.3e} "
            f"after {iters} iterations",
            residual=residual,
        )
    return ScalarField(grid, x.reshape(grid.n_s, grid.n_d)), iters, residual


def solve_field_pair(measures_by_style: dict, grid: GridSpec, style_params: dict,
                     field_params: FieldParams | None = None) -> FieldPair:
    """Assemble both sources and run both elliptic solves."""
    field_params = field_params or FieldParams()
    b_src = benefit_source(measures_by_style, grid, style_params, field_params)
    r_src = risk_source(measures_by_style, grid, style_params, field_params)
    benefit, it_b, res_b = solve_screened_poisson_info(b_src, field_params.tikhonov_B, field_params)
    risk, it_r, res_r = solve_screened_poisson_info(r_src, field_params.tikhonov_R, field_params)
    return FieldPair(benefit, risk, (it_b, it_r), (res_b, res_r))
