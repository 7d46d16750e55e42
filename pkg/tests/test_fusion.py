"""Cahn-Hilliard fusion: coupling, conservation, energy descent, residual."""

import numpy as np
import pytest

from iupf.errors import InstabilityError, InvalidParameterError
from iupf.fieldgrid import GridSpec, ScalarField
from iupf.fusion import (
    FusionParams,
    coupling_chi,
    double_well,
    double_well_prime,
    euler_lagrange_residual,
    evolve_cahn_hilliard,
    fuse,
    ginzburg_landau_energy,
    initial_phi,
)

from conftest import smooth_random_field


@pytest.fixture
def spec():
    return GridSpec(0.0, 120.0, -8.0, 8.0, 40, 12)


def no_coupling():
    return FusionParams(gamma1=0, gamma2=0, gamma3=0, gamma4=0, gamma5=0,
                        tau_step=2e-3, max_steps=1, steady_tol=0.0)


# -- pointwise pieces ----------------------------------------------------

def test_double_well_prime_values():
    assert double_well_prime(0.0) == 0.0
    assert double_well_prime(1.0) == 0.0
    assert double_well_prime(-1.0) == 0.0
    assert double_well_prime(2.0) == 6.0
    assert double_well(1.0) == 0.0
    assert double_well(0.0) == 0.25


def test_coupling_chi_term_by_term():
    p = FusionParams(gamma1=3.3, gamma2=3.3, gamma3=0.5, gamma4=0.5, gamma5=0.1)
    assert coupling_chi(0.0, 0.0, 5.0, p=p) == pytest.approx(0.0)
    assert coupling_chi(1.0, 0.0, 0.0, p=p) == pytest.approx(p.gamma1, abs=1e-12)
    assert coupling_chi(0.0, 1.0, 1.0, p=p) == pytest.approx(-p.gamma2 - p.gamma4, abs=1e-12)


def test_coupling_chi_gradient_term():
    p = FusionParams(gamma1=0, gamma2=0, gamma3=0, gamma4=0, gamma5=0.1)
    out = coupling_chi(0.5, 0.5, 0.0, gradB=(2.0, 1.0), gradR=(3.0, -4.0), p=p)
    assert out == pytest.approx(0.1 * (6.0 - 4.0), abs=1e-12)


def test_coupling_chi_swap_symmetry(rng):
    # Swapping B<->R with (gamma1,alpha1)<->(gamma2,alpha2) negates the
    # gamma1/gamma2 contributions. The gamma4 term gamma4*phi*(B^2-R^2) is
    # invariant (not negated) under the combined swap-and-negate-phi map,
    # because both factors flip sign; it negates under the swap alone.
    p12 = FusionParams(gamma1=2.0, gamma2=3.0, gamma3=0.0, gamma4=0.0, gamma5=0.0,
                       alpha1=2.5, alpha2=3.5)
    p21 = FusionParams(gamma1=3.0, gamma2=2.0, gamma3=0.0, gamma4=0.0, gamma5=0.0,
                       alpha1=3.5, alpha2=2.5)
    B = rng.uniform(size=50)
    R = rng.uniform(size=50)
    phi = rng.uniform(-1, 1, size=50)
    assert np.max(np.abs(coupling_chi(B, R, phi, p=p12)
                         + coupling_chi(R, B, -phi, p=p21))) <= 1e-12

    p4 = FusionParams(gamma1=0.0, gamma2=0.0, gamma3=0.0, gamma4=0.7, gamma5=0.0)
    forward4 = coupling_chi(B, R, phi, p=p4)
    assert np.max(np.abs(coupling_chi(R, B, phi, p=p4) + forward4)) <= 1e-12  # swap negates
    assert np.max(np.abs(coupling_chi(R, B, -phi, p=p4) - forward4)) <= 1e-12  # swap+negate invariant


def test_fusion_params_validation():
    with pytest.raises(InvalidParameterError):
        FusionParams(alpha1=1.0)
    with pytest.raises(InvalidParameterError):
        FusionParams(gamma3=-0.1)
    with pytest.raises(InvalidParameterError):
        FusionParams(tau_step=0.0)
    with pytest.raises(InvalidParameterError):
        FusionParams(epsilon=-1.0)


# -- evolution -----------------------------------------------------------

def test_symmetric_fixed_point_stays_zero(spec):
    # Identical constant fields: both normalize to flat 0.5, chi vanishes
    # identically, and phi0 = 0 is a fixed point.
    B = ScalarField.full(spec, 2.0)
    R = ScalarField.full(spec, 2.0)
    p = FusionParams(gamma1=3.3, gamma2=3.3, alpha1=2.8, alpha2=2.8,
                     tau_step=2e-3, max_steps=50, steady_tol=0.0)
    out = evolve_cahn_hilliard(ScalarField.zeros(spec), B, R, p)
    assert np.max(np.abs(out.phi.values)) <= 1e-12


def test_identical_fields_without_asymmetric_terms_stay_zero(spec, rng):
    # With gamma3 = gamma5 = 0 the chi of two identical non-constant fields
    # is exactly zero at phi = 0, so phi0 = 0 is preserved.
    B = smooth_random_field(spec, rng, amplitude=1.0)
    p = FusionParams(gamma1=3.3, gamma2=3.3, gamma3=0.0, gamma4=0.5, gamma5=0.0,
                     tau_step=2e-3, max_steps=50, steady_tol=0.0)
    out = evolve_cahn_hilliard(ScalarField.zeros(spec), B, B, p)
    assert np.max(np.abs(out.phi.values)) <= 1e-12


def test_uniform_well_minimum_is_equilibrium(spec):
    B = ScalarField.full(spec, 1.0)
    R = ScalarField.full(spec, 1.0)
    p = no_coupling()
    out = evolve_cahn_hilliard(ScalarField.full(spec, 1.0), B, R, p)
    assert np.max(np.abs(out.phi.values - 1.0)) <= 1e-12
    # mu = eps^2*lap(1) - W'(1) vanishes up to roundoff in the Laplacian
    # application; the normalized residual divides noise by noise, so the
    # meaningful check is the absolute deviation of mu from a constant.
    eps = p.resolve_epsilon(spec)
    from iupf.fieldgrid import laplacian_matrix
    flat = np.ones(spec.n_s * spec.n_d)
    mu = eps**2 * (laplacian_matrix(spec) @ flat) - (flat**3 - flat)
    assert np.linalg.norm(mu - mu.mean()) <= 1e-12


def test_mass_conservation_per_step(spec, rng):
    B = smooth_random_field(spec, rng, amplitude=1.0)
    R = smooth_random_field(spec, rng, amplitude=1.0)
    phi = initial_phi(B, R)
    p = FusionParams(tau_step=2e-3, max_steps=1, steady_tol=0.0)
    mean0 = phi.values.mean()
    for _ in range(100):
        out = evolve_cahn_hilliard(phi, B, R, p)
        assert abs(out.phi.values.mean() - phi.values.mean()) <= 1e-10
        phi = out.phi
    assert abs(phi.values.mean() - mean0) <= 1e-8


def test_energy_descent_without_coupling(spec, rng):
    phi = smooth_random_field(spec, rng, amplitude=0.8)
    B = ScalarField.full(spec, 1.0)
    R = ScalarField.full(spec, 1.0)
    p = no_coupling()
    energy = ginzburg_landau_energy(phi, p)
    for _ in range(200):
        out = evolve_cahn_hilliard(phi, B, R, p)
        new_energy = ginzburg_landau_energy(out.phi, p)
        assert new_energy <= energy + 1e-12
        energy = new_energy
        phi = out.phi


def test_initial_phi_range(spec, rng):
    B = smooth_random_field(spec, rng, amplitude=3.0)
    R = smooth_random_field(spec, rng, amplitude=2.0)
    phi0 = initial_phi(B, R)
    assert phi0.values.min() >= -1.0 - 1e-12
    assert phi0.values.max() <= 1.0 + 1e-12


def test_residual_ordering_random_vs_converged(spec):
    B = ScalarField.full(spec, 1.0)
    R = ScalarField.full(spec, 1.0)
    p = no_coupling()
    converged = evolve_cahn_hilliard(ScalarField.full(spec, 1.0), B, R, p)
    rng = np.random.default_rng(5)
    random_phi = ScalarField(spec, rng.uniform(-1, 1, size=(spec.n_s, spec.n_d)))
    assert euler_lagrange_residual(random_phi, B, R, p) > converged.residual


def test_termination_by_tolerance_reports_small_residual(spec):
    # A genuinely reachable steady state (uniform equilibrium): terminating by
    # tolerance leaves the unnormalized Euler-Lagrange deviation at roundoff.
    # The reported residual is the scale-invariant ratio ||mu-mean||/||mu||,
    # which is uninformative when mu itself is pure roundoff noise, so the
    # assertion is on the absolute deviation.
    B = ScalarField.full(spec, 1.0)
    R = ScalarField.full(spec, 1.0)
    p = FusionParams(gamma1=0, gamma2=0, gamma3=0, gamma4=0, gamma5=0,
                     tau_step=2e-3, max_steps=500, steady_tol=1e-9)
    out = evolve_cahn_hilliard(ScalarField.full(spec, 1.0), B, R, p)
    assert out.final_change < p.steady_tol
    eps = p.resolve_epsilon(spec)
    from iupf.fieldgrid import laplacian_matrix
    mu = (eps**2 * (laplacian_matrix(spec) @ out.phi.values.ravel())
          - (out.phi.values.ravel()**3 - out.phi.values.ravel()))
    assert np.linalg.norm(mu - mu.mean()) <= 10.0 * p.steady_tol


def test_divergence_guard(spec, rng):
    B = smooth_random_field(spec, rng, amplitude=1.0)
    R = smooth_random_field(spec, rng, amplitude=1.0)
    p = FusionParams(tau_step=50.0, stabilization=0.0, gamma1=50.0, gamma2=0.0,
                     max_steps=5000, steady_tol=0.0)
    with pytest.raises(InstabilityError):
        evolve_cahn_hilliard(ScalarField(spec, rng.uniform(-1, 1, (spec.n_s, spec.n_d))), B, R, p)


def test_fuse_defaults_to_initial_phi(spec, rng):
    B = smooth_random_field(spec, rng, amplitude=1.0)
    R = smooth_random_field(spec, rng, amplitude=1.0)
    p = FusionParams(tau_step=2e-3, max_steps=20, steady_tol=1e-8)
    out = fuse(B, R, p)
    assert out.steps_taken >= 1
    assert np.all(np.isfinite(out.phi.values))
    # mass conservation across the whole fuse
    assert out.phi.values.mean() == pytest.approx(initial_phi(B, R).values.mean(), abs=1e-8)


def test_grid_mismatch_rejected(spec):
    other = GridSpec(0.0, 120.0, -8.0, 8.0, 41, 12)
    with pytest.raises(InvalidParameterError):
        evolve_cahn_hilliard(ScalarField.zeros(spec), ScalarField.zeros(other),
                             ScalarField.zeros(spec), FusionParams())
