import numpy as np
import pytest
from numpy.testing import assert_allclose

from qbm import specfun
from qbm.covariance import late_covariance, late_covariance_ohmic_closed, thermal_covariance, thermal_covariance_rate
from qbm.errors import ApplicabilityWarning, DegenerateBoundaryError, StabilityError
from qbm.master import (DiffusionMatrix, PseudoHamiltonian, characteristic_propagator, coefficient_series,
                        coefficients_from_hamiltonian, decay_function, diffusion_from_covariance, diffusion_matrix,
                        diffusion_time_ohmic_largecutoff, late_diffusion_ohmic_largecutoff,
                        late_time_coefficients, lyapunov_residual, lyapunov_solve, pseudo_hamiltonian, thermal_sum)
from qbm.propagator import Propagator, late_pseudo_hamiltonian, phase_propagator, star_parameters
from qbm.spectrum import SpectralModel


def test_diffusion_vanishes_at_origin(ohmic):
    assert diffusion_matrix(ohmic, 0.0) == DiffusionMatrix(1.0, 0.0, 0.0)


def test_local_pseudo_hamiltonian_is_constant():
    """For strictly local damping H(t) = [[0, -1/M], [M Omega^2, 2 gamma]] at all times."""
    prop = Propagator.local(2.0, 1.5, 0.2)
    for t in (0.3, 2.0, 9.0):
        H = pseudo_hamiltonian(prop, t)
        assert_allclose([H.Omega_R_sq, H.Gamma], [1.5 ** 2, 0.2], rtol=1e-10)


def test_pseudo_hamiltonian_matrix_roundtrip():
    H = PseudoHamiltonian(2.0, 3.0, 0.25)
    assert coefficients_from_hamiltonian(H.matrix) == (3.0, 0.25)
    D = DiffusionMatrix(2.0, 0.3, 1.1)
    assert DiffusionMatrix.from_matrix(2.0, D.matrix) == D


def test_hamiltonian_relaxes_to_slow_pair(ohmic):
    """H(t) -> H_inf once the cut-off mode has decayed."""
    star = star_parameters(1.0, 1.0, 0.1, 20.0)
    H = pseudo_hamiltonian(ohmic, 5.0)
    assert_allclose([H.Gamma, H.Omega_R_sq], [star.gamma_star, star.Omega_star ** 2], rtol=1e-8)
    late = late_time_coefficients(ohmic, 0.0)
    assert_allclose([late.Gamma_inf, late.OmegaR_inf], [star.gamma_star, star.Omega_star], rtol=1e-10)


def _local_hamiltonian(M, Omega, gamma0):
    return PseudoHamiltonian(M, Omega ** 2, gamma0).matrix


def test_lyapunov_closure():
    """The closed late diffusion closes H sigma + sigma H^T = 2 D on the local-propagator covariance."""
    H = _local_hamiltonian(1.0, 1.0, 0.1)
    late = late_diffusion_ohmic_largecutoff(1.0, 1.0, 0.1, 20.0, 1.0)
    D = DiffusionMatrix(1.0, late.D_xp, late.D_pp).matrix
    sigma = late_covariance_ohmic_closed(1.0, 1.0, 0.1, 20.0, 1.0, local_rates=True).matrix
    assert lyapunov_residual(H, D, sigma) < 1e-9
    assert_allclose(lyapunov_solve(H, D), sigma, rtol=1e-8, atol=1e-12)


def test_exact_late_coefficients_close_lyapunov(ohmic_warm):
    """late_time_coefficients against the independent residue evaluation of sigma_inf."""
    H = late_pseudo_hamiltonian(ohmic_warm)
    late = late_time_coefficients(ohmic_warm, 1.0)
    D = DiffusionMatrix(1.0, late.Dxp_inf, late.Dpp_inf).matrix
    sigma = late_covariance_ohmic_closed(1.0, 1.0, 0.1, 20.0, 1.0).matrix
    assert_allclose(lyapunov_solve(H, D), sigma, rtol=1e-6, atol=1e-9)


@pytest.mark.parametrize("gamma0", [0.1, 2.0])
@pytest.mark.parametrize("T", [0.0, 0.5, 5.0])
def test_late_large_cutoff_matches_local_quadrature(gamma0, T):
    """Harmonic-number D_inf equals the stationary D of the quadrature sigma_inf with the local propagator."""
    M, Omega, Lambda = 1.0, 1.0, 1e3
    model = SpectralModel.ohmic(M, Omega, gamma0, Lambda, T=T)
    sigma = late_covariance(model, T, local_rates=(gamma0, Omega ** 2)).matrix
    expected = DiffusionMatrix.from_matrix(M, diffusion_from_covariance(_local_hamiltonian(M, Omega, gamma0), sigma))
    closed = late_diffusion_ohmic_largecutoff(M, Omega, gamma0, Lambda, T)
    assert_allclose([closed.D_xp, closed.D_pp], [expected.D_xp, expected.D_pp], rtol=1e-6)


def test_late_large_cutoff_weak_coupling():
    """gamma0 -> 0: D_pp -> gamma0 Omega coth(Omega/2T), D_xp -> (2/pi) gamma0 Re[H(Lambda/2piT) - H(i Omega/2piT)]."""
    g, Omega, Lambda, T = 1e-3, 1.0, 1e3, 1.0
    late = late_diffusion_ohmic_largecutoff(1.0, Omega, g, Lambda, T)
    s = 2 * np.pi * T
    gap = specfun.harmonic_number(Lambda / s) - specfun.harmonic_number(1j * Omega / s)
    assert_allclose(late.D_pp, g * Omega / np.tanh(Omega / (2 * T)), rtol=5e-3)
    assert_allclose(late.D_xp, (2 / np.pi) * g * np.real(gap), rtol=5e-3)


def test_late_large_cutoff_weak_coupling_zero_temperature():
    g, Omega, Lambda = 1e-3, 1.0, 1e3
    late = late_diffusion_ohmic_largecutoff(1.0, Omega, g, Lambda, 0.0)
    assert_allclose(late.D_pp, g * Omega, rtol=5e-3)
    assert_allclose(late.D_xp, (2 / np.pi) * g * np.log(Lambda / Omega), rtol=5e-3)


def test_late_large_cutoff_critical_damping():
    with pytest.raises(DegenerateBoundaryError):
        late_diffusion_ohmic_largecutoff(1.0, 1.0, 1.0, 1e3, 1.0)


def test_lyapunov_solve_needs_stable_hamiltonian():
    with pytest.raises(StabilityError):
        lyapunov_solve(np.array([[0.0, -1.0], [1.0, -0.2]]), np.eye(2))


def test_diffusion_from_covariance_inverts_lyapunov():
    H = np.array([[0.0, -0.5], [2.0, 0.4]])
    D = np.array([[0.0, -0.1], [-0.1, 0.8]])
    assert_allclose(diffusion_from_covariance(H, lyapunov_solve(H, D)), D, atol=1e-12)


def test_diffusion_approaches_late_values(ohmic_warm):
    """At finite T the exact D(t) converges exponentially to D_inf."""
    late = late_time_coefficients(ohmic_warm, 1.0)
    D = diffusion_matrix(ohmic_warm, 30.0, 1.0)
    assert_allclose([D.D_xp, D.D_pp], [late.Dxp_inf, late.Dpp_inf], rtol=1e-4)


@pytest.mark.parametrize("t", [0.05, 0.5, 1.3, 5.0, 12.0, 30.0])
def test_diffusion_matches_covariance_derivative(ohmic_warm, t):
    """sigma(t) driven by D(t): sigma' = -H sigma - sigma H^T + 2 D along the thermal transient."""
    prop_H = pseudo_hamiltonian(ohmic_warm, t).matrix
    sigma = thermal_covariance(ohmic_warm, 1.0, t).matrix
    rate = thermal_covariance_rate(ohmic_warm, 1.0, t).matrix
    D = diffusion_matrix(ohmic_warm, t, 1.0).matrix
    assert_allclose(rate, -prop_H @ sigma - sigma @ prop_H.T + 2 * D, atol=1e-6)


def test_coefficient_series(ohmic):
    grid = np.linspace(0.0, 2.0, 5)
    series = coefficient_series(ohmic, grid, 0.0)
    assert series.poles == ()
    assert series.D_xp[0] == 0.0 and series.D_pp[0] == 0.0
    assert_allclose(series.Gamma[3], pseudo_hamiltonian(ohmic, grid[3]).Gamma, rtol=1e-14)
    with pytest.raises(ValueError):
        coefficient_series(ohmic, [1.0], 0.0)


def test_characteristic_propagator_is_inverse_transpose(ohmic):
    """Phi_k(t) = Phi(t)^-T along the characteristic curves."""
    t = 1.7
    assert_allclose(characteristic_propagator(ohmic, t), np.linalg.inv(phase_propagator(ohmic, t)).T,
                    rtol=1e-7, atol=1e-9)


def test_late_large_cutoff_close_to_exact():
    """The local-propagator late diffusion differs from the exact one at order gamma0/Lambda."""
    model = SpectralModel.ohmic(1.0, 1.0, 0.1, 1e3, T=1.0)
    exact = late_time_coefficients(model, 1.0)
    approx = late_diffusion_ohmic_largecutoff(1.0, 1.0, 0.1, 1e3, 1.0)
    assert_allclose([approx.D_xp, approx.D_pp], [exact.Dxp_inf, exact.Dpp_inf], rtol=1e-2)


@pytest.mark.parametrize("T", [0.0, 1.0])
def test_large_cutoff_diffusion_limits(T):
    """D(0) = 0 and D(t) -> D_inf as the decay function dies out."""
    with pytest.warns(ApplicabilityWarning):
        zero = diffusion_time_ohmic_largecutoff(1.0, 1.0, 0.1, 20.0, T, 0.0)
    assert zero == (0.0, 0.0)
    late = late_diffusion_ohmic_largecutoff(1.0, 1.0, 0.1, 2e3, T)
    far = diffusion_time_ohmic_largecutoff(1.0, 1.0, 0.1, 2e3, T, 400.0)
    assert_allclose(far.D_pp, late.D_pp, rtol=1e-4)


def test_large_cutoff_diffusion_tracks_exact():
    """At large cut-off the operator form follows the exact D(t) once t >> 1/Lambda."""
    M, Omega, g, L, T = 1.0, 1.0, 0.1, 500.0, 1.0
    model = SpectralModel.ohmic(M, Omega, g, L, T=T)
    for t in (0.5, 2.0):
        exact = diffusion_matrix(model, t, T)
        approx = diffusion_time_ohmic_largecutoff(M, Omega, g, L, T, t)
        assert_allclose([approx.D_xp, approx.D_pp], [exact.D_xp, exact.D_pp], rtol=2e-2, atol=5e-3)


def test_decay_function_exact_vs_derivative():
    """The derivative flag matches a finite difference of DF."""
    args = (1.0, 1.0, 0.1, 200.0, 1.0)
    t, h = 0.8, 1e-3
    fd = (decay_function(*args, t + h) - decay_function(*args, t - h)) / (2 * h)
    assert_allclose(decay_function(*args, t, derivative=True), fd, rtol=1e-3, atol=1e-7)


def test_decay_function_zero_temperature_derivative():
    args = (1.0, 1.0, 0.1, 200.0, 0.0)
    t, h = 0.8, 1e-3
    fd = (decay_function(*args, t + h) - decay_function(*args, t - h)) / (2 * h)
    assert_allclose(decay_function(*args, t, derivative=True), fd, rtol=1e-3, atol=1e-7)


def test_decay_function_arguments():
    with pytest.raises(ValueError):
        decay_function(1.0, 1.0, 0.1, 200.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        decay_function(1.0, 1.0, 0.1, 200.0, 1.0, 1.0, method="matsubara")


def test_thermal_sum_critical_damping():
    """gamma0 = Omega makes the kernel pole double."""
    with pytest.raises(DegenerateBoundaryError):
        thermal_sum(1.0, 1.0, 200.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        thermal_sum(1.0, 0.1, 200.0, 0.0, 0.5)


def test_qualitative_decay_is_finite():
    """The integral replacement of the Matsubara sum gives a finite DF and slope."""
    args = (1.0, 1.0, 0.1, 200.0, 1.0)
    for t in (0.1, 3.0):
        assert np.isfinite(decay_function(*args, t, method="qualitative"))
        assert np.isfinite(decay_function(*args, t, method="qualitative", derivative=True))


@pytest.mark.parametrize("derivative", [False, True])
@pytest.mark.parametrize("T, k, t", [(1.0, 32, 0.5), (10.0, 3, 0.01)])
def test_decay_function_at_integer_matsubara_ratio(T, k, t, derivative):
    """Lambda = 2 pi T k: the cot pole and the k-th Lerch term cancel, DF stays smooth in Lambda."""
    s = 2 * np.pi * T
    at = decay_function(1.0, 1.0, 0.1, s * k, T, t, derivative=derivative)
    lo = decay_function(1.0, 1.0, 0.1, s * (k - 0.01), T, t, derivative=derivative)
    hi = decay_function(1.0, 1.0, 0.1, s * (k + 0.01), T, t, derivative=derivative)
    assert np.isfinite(at)
    assert_allclose(at, 0.5 * (lo + hi), rtol=1e-3, atol=1e-10)


def test_large_cutoff_diffusion_at_integer_matsubara_ratio():
    T, k = 1.0, 32
    D = diffusion_time_ohmic_largecutoff(1.0, 1.0, 0.1, 2 * np.pi * T * k, T, 0.5)
    assert np.isfinite(D.D_xp) and np.isfinite(D.D_pp)


def test_zero_temperature_jolt_scales_with_cutoff():
    """At T = 0 D_pp spikes within t ~ 1/Lambda, with a height proportional to Lambda."""
    peaks = {}
    for Lambda in (100.0, 1000.0):
        grid = np.geomspace(0.05 / Lambda, 20.0 / Lambda, 41)
        d_pp = np.abs([diffusion_time_ohmic_largecutoff(1.0, 1.0, 0.1, Lambda, 0.0, t).D_pp for t in grid])
        i = int(np.argmax(d_pp))
        assert 0.3 < Lambda * grid[i] < 3.0
        peaks[Lambda] = d_pp[i]
    assert 8.0 < peaks[1000.0] / peaks[100.0] < 12.0
    late = late_diffusion_ohmic_largecutoff(1.0, 1.0, 0.1, 1000.0, 0.0)
    assert peaks[1000.0] > 10 * abs(late.D_pp)
