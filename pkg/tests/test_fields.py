"""Benefit/risk sources and the screened-Poisson solves."""

import numpy as np
import pytest

from iupf.dynamics import VehicleState
from iupf.errors import ConvergenceError, InvalidParameterError
from iupf.fieldgrid import GridSpec, ScalarField, laplacian_matrix, sample_bilinear
from iupf.fields import (
    FieldParams,
    benefit_source,
    kernel_G,
    kernel_H,
    risk_source,
    solve_field_pair,
    solve_screened_poisson,
    solve_screened_poisson_info,
)
from iupf.population import PopulationMeasure, StyleParameters

import scipy.sparse as sp


def unit_params(lambda_B=155.0, lambda_R=8.0, alpha_B=1.0, alpha_R=1.0):
    return StyleParameters(alpha_B=alpha_B, alpha_R=alpha_R, lambda_B=lambda_B,
                           lambda_R=lambda_R, sigma_B=3.75, sigma_R=3.75,
                           r_s=1.0, r_d=1.0)


def single_atom_measures(state):
    return {"cooperative": PopulationMeasure.from_states([state])}


@pytest.fixture
def spec():
    return GridSpec(0.0, 600.0, -8.0, 8.0, 121, 9)


def dense_operator(spec, tikhonov):
    n = spec.n_s * spec.n_d
    return (tikhonov * sp.identity(n) - laplacian_matrix(spec)).toarray()


# -- kernels -------------------------------------------------------------

def test_kernel_G_values():
    assert kernel_G(0.0, 155.0) == pytest.approx(1.0)
    assert kernel_G(155.0, 155.0) == pytest.approx(np.exp(-1), abs=1e-6)
    assert kernel_G(8.0, 8.0) == pytest.approx(0.367879, abs=1e-6)


def test_kernel_H_values():
    assert kernel_H(0.0, 0.0, 8.0, 33.3) == pytest.approx(1.0)
    assert kernel_H(0.0, 33.3, 8.0, 33.3) == pytest.approx(2.0)
    assert kernel_H(8.0, 0.0, 8.0, 33.3) == pytest.approx(np.exp(-1))


# -- sources -------------------------------------------------------------

def test_benefit_source_empty_population(spec):
    src = benefit_source({"cooperative": PopulationMeasure(())}, spec, {"cooperative": unit_params()})
    assert np.all(src.values == 0.0)


def test_benefit_source_single_atom_kernel_profile(spec):
    # atom exactly on a node: s=200 lies on the 121-point grid (ds = 5), d=0 on d grid
    atom = VehicleState(200.0, 0.0, 20.0, 0.0)
    src = benefit_source(single_atom_measures(atom), spec, {"cooperative": unit_params()})
    assert sample_bilinear(src, (200.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    downstream = sample_bilinear(src, (355.0, 0.0))
    assert downstream == pytest.approx(np.exp(-1), abs=5e-3)
    assert np.all(src.values >= 0.0)


def test_benefit_source_linear_in_measure(spec):
    atom = VehicleState(200.0, 0.0, 20.0, 0.0)
    one = benefit_source(single_atom_measures(atom), spec, {"cooperative": unit_params()})
    two = benefit_source(
        {"cooperative": PopulationMeasure.from_states([atom, atom])},
        spec, {"cooperative": unit_params()})
    assert np.max(np.abs(one.values - two.values)) <= 1e-14


def test_risk_source_speed_amplification(spec):
    params = {"cooperative": unit_params()}
    fp = FieldParams(v_max=33.3)
    still = risk_source(single_atom_measures(VehicleState(200, 0, 0, 0)), spec, params, fp)
    fast = risk_source(single_atom_measures(VehicleState(200, 0, 33.3, 0)), spec, params, fp)
    assert sample_bilinear(still, (200.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    assert sample_bilinear(fast, (200.0, 0.0)) == pytest.approx(2.0, abs=1e-12)
    empty = risk_source({"cooperative": PopulationMeasure(())}, spec, params, fp)
    assert np.all(empty.values == 0.0)


# -- screened Poisson ----------------------------------------------------

def test_constant_source_uniform_solution():
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    lam = 2.5
    sol = solve_screened_poisson(ScalarField.full(spec, 5.0), lam)
    assert np.max(np.abs(sol.values - 5.0 / lam)) <= 1e-10


def test_zero_source_zero_solution():
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    field, iters, res = solve_screened_poisson_info(ScalarField.zeros(spec), 1.0)
    assert np.all(field.values == 0.0)
    assert iters == 0 and res == 0.0


def test_cg_matches_dense_solve(rng):
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    dense = dense_operator(spec, 1.0)
    for _ in range(5):
        src = rng.normal(size=(spec.n_s, spec.n_d))
        got = solve_screened_poisson(ScalarField(spec, src), 1.0).values.ravel()
        want = np.linalg.solve(dense, src.ravel())
        assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-8


def test_maximum_principle_nonnegative(rng):
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    src = rng.uniform(0.0, 1.0, size=(spec.n_s, spec.n_d))
    sol = solve_screened_poisson(ScalarField(spec, src), 1.0)
    assert sol.values.min() >= -1e-10


def test_solver_linearity(rng):
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    s1 = rng.normal(size=(spec.n_s, spec.n_d))
    s2 = rng.normal(size=(spec.n_s, spec.n_d))
    a, b = 2.0, -0.5
    combined = solve_screened_poisson(ScalarField(spec, a * s1 + b * s2), 1.0).values
    separate = (a * solve_screened_poisson(ScalarField(spec, s1), 1.0).values
                + b * solve_screened_poisson(ScalarField(spec, s2), 1.0).values)
    denom = np.linalg.norm(separate)
    assert np.linalg.norm(combined - separate) / denom <= 1e-8


def test_energy_optimality(rng):
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    lam = 1.0
    src = rng.normal(size=(spec.n_s, spec.n_d)).ravel()
    op = dense_operator(spec, lam)
    x = np.linalg.solve(op, src)

    def energy(v):
        return 0.5 * v @ (op @ v) - src @ v

    base = energy(x)
    for _ in range(100):
        pert = rng.normal(scale=1e-3, size=x.shape)
        assert energy(x + pert) > base


def test_monotone_decay_along_s():
    spec = GridSpec(0.0, 600.0, -8.0, 8.0, 121, 9)
    atom = VehicleState(300.0, 0.0, 0.0, 0.0)
    src = benefit_source(single_atom_measures(atom), spec, {"cooperative": unit_params(lambda_B=40.0)})
    sol = solve_screened_poisson(src, 1.0)
    j = 4  # d = 0 row
    i0 = 60  # s = 300 node
    profile = sol.values[i0:, j]
    assert np.all(np.diff(profile) <= 1e-12)


def test_convergence_error_carries_residual():
    spec = GridSpec(0, 100, -8, 8, 25, 10)
    src = ScalarField(spec, np.sin(np.arange(spec.n_s * spec.n_d)).reshape(spec.n_s, spec.n_d))
    params = FieldParams(cg_max_iter=1, cg_tol=1e-12)
    with pytest.raises(ConvergenceError) as err:
        solve_screened_poisson(src, 1.0, params)
    assert err.value.residual is not None and err.value.residual > 1e-12


def test_field_params_validation():
    with pytest.raises(InvalidParameterError):
        FieldParams(tikhonov_B=0.0)
    with pytest.raises(InvalidParameterError):
        FieldParams(cg_tol=2.0)
    with pytest.raises(InvalidParameterError):
        solve_screened_poisson(ScalarField.zeros(GridSpec(0, 10, -1, 1, 5, 5)), 0.0)


def test_solve_field_pair_residuals_within_tolerance():
    spec = GridSpec(0.0, 600.0, -8.0, 8.0, 121, 9)
    measures = single_atom_measures(VehicleState(200.0, 0.0, 20.0, 0.0))
    params = FieldParams()
    pair = solve_field_pair(measures, spec, {"cooperative": unit_params()}, params)
    assert all(r <= params.cg_tol for r in pair.residuals)
    assert pair.benefit.values.min() >= -1e-10
    assert pair.risk.values.min() >= -1e-10
