import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qbm.covariance import Covariance2, thermal_covariance
from qbm.errors import ConfigError, NonPhysicalStateError, OrderUnsupportedError
from qbm.propagator import mode_decomposition, phase_propagator
from qbm.spectrum import SpectralModel
from qbm.state import (ForceProfile, GaussianState, SuperpositionState, apply_force, characteristic_function,
                       decoherence_profile, driven_mean, effective_force, evolve_cumulants, evolve_gaussian,
                       initial_kick_transform, linear_entropy)


def test_state_validation():
    """States violating det sigma >= 1/4 are rejected."""
    with pytest.raises(NonPhysicalStateError):
        GaussianState(cov=Covariance2(0.4, 0.0, 0.4))
    with pytest.raises(NonPhysicalStateError):
        GaussianState(cov=Covariance2(-1.0, 0.0, 1.0))
    coherent = GaussianState.coherent(2.0, 0.5, x=1.0)
    assert_allclose(coherent.cov.det, 0.25)
    assert_allclose(coherent.purity, 1.0)


def test_evolution_at_origin(ohmic):
    state = GaussianState.coherent(1.0, 1.0, x=1.0, p=-0.5)
    out = evolve_gaussian(ohmic, 0.0, state, 0.0)
    assert_allclose(out.mean, state.mean, atol=1e-12)
    assert_allclose(out.cov.matrix, state.cov.matrix, atol=1e-12)


@pytest.mark.parametrize("T", [0.0, 1.0])
def test_uncertainty_along_evolution(ohmic, T):
    """The exact evolution keeps det sigma >= 1/4 and moves the mean with Phi."""
    state = GaussianState.coherent(1.0, 1.0, x=1.0)
    for t in (0.05, 0.5, 2.0, 6.0):
        out = evolve_gaussian(ohmic, T, state, t)
        assert out.cov.det >= 0.25 - 1e-10
        assert_allclose(out.mean_vector, phase_propagator(ohmic, t) @ state.mean_vector, atol=1e-12)


def test_linear_entropy(ohmic_warm):
    """A pure initial state starts at S_L = 0 and mixes in contact with a warm bath."""
    state = GaussianState.coherent(1.0, 1.0)
    values = linear_entropy(ohmic_warm, 1.0, state, np.array([0.0, 1.0, 4.0]))
    assert values.shape == (3,)
    assert abs(values[0]) < 1e-12
    assert values[1] > 0
    assert values[2] > values[1]


def test_cumulants_transport(ohmic):
    """Only the second cumulant picks up sigma_T; the third transforms as a tensor."""
    t = 0.8
    phi = phase_propagator(ohmic, t)
    rng = np.random.default_rng(3)
    k3 = rng.normal(size=(2, 2, 2))
    mean = np.array([0.3, -0.2])
    cov = np.diag([0.6, 0.7])
    k1, k2, k3_t = evolve_cumulants(ohmic, 0.0, [mean, cov, k3], t)
    assert_allclose(k1, phi @ mean, atol=1e-14)
    assert_allclose(k2, phi @ cov @ phi.T + thermal_covariance(ohmic, 0.0, t).matrix, atol=1e-12)
    assert_allclose(k3_t, np.einsum("ai,bj,ck,ijk->abc", phi, phi, phi, k3), atol=1e-12)
    with pytest.raises(OrderUnsupportedError):
        evolve_cumulants(ohmic, 0.0, [None] * 5, t)


def test_characteristic_function(ohmic_warm):
    state = GaussianState.coherent(1.0, 1.0, x=0.5)
    assert characteristic_function(ohmic_warm, 1.0, state, [0.0, 0.0], 1.0) == 1
    value = characteristic_function(ohmic_warm, 1.0, state, [0.7, -0.3], 1.0)
    assert abs(value) < 1


@settings(max_examples=25, deadline=None)
@given(c=st.floats(0.0, 2.0), gamma0=st.floats(0.0, 5.0))
def test_kick_preserves_purity(c, gamma0):
    """The kick is a shear: determinant and linear entropy are unchanged."""
    state = GaussianState.from_arrays([0.2, 0.1], [[0.8, 0.1], [0.1, 0.6]])
    kicked = initial_kick_transform(state, c, gamma0, 1.5)
    assert_allclose(kicked.cov.det, state.cov.det, rtol=1e-9)
    assert_allclose(kicked.mean[1], 0.1 - c * 1.5 * gamma0 * 0.2, rtol=1e-12, atol=1e-15)


def test_kick_range_and_superposition():
    state = GaussianState.coherent(1.0, 1.0)
    with pytest.raises(ValueError):
        initial_kick_transform(state, 2.5, 0.1, 1.0)
    sup = SuperpositionState(base=state, delta_x=1.0)
    kicked = initial_kick_transform(initial_kick_transform(sup, 1.0, 0.1, 1.0), 1.0, 0.1, 1.0)
    assert_allclose(kicked.shear, -0.2)
    assert_allclose(kicked.offset, [1.0, -0.2])


def test_superposition_delta_x_is_half_separation():
    """Lobes at +-delta_x: fringes cos(2 delta_x p) and overlap exp(-2 delta_x^2 sigma_pp)."""
    sup = SuperpositionState(base=GaussianState.coherent(1.0, 1.0), delta_x=0.75)
    assert_allclose(sup.offset, [0.75, 0.0])
    assert_allclose(sup.wavevector, [0.0, 1.5])
    assert_allclose(sup.normalization, 2 * (1 + np.exp(-2 * 0.75 ** 2 * 0.5)), rtol=1e-14)


def test_constant_force_mean(ohmic):
    """x_F = F int_0^t G, p_F = M F G(t) for a constant force."""
    F, t = 0.7, 3.0
    total = sum(a * (np.exp(f * t) - 1) / f for a, f in mode_decomposition(ohmic).exp_modes)
    x, p = driven_mean(ohmic, ForceProfile.constant(F), t)
    assert_allclose(x, F * total.real, rtol=1e-8)
    assert_allclose(p, F * np.real(sum(a * np.exp(f * t) for a, f in mode_decomposition(ohmic).exp_modes)),
                    rtol=1e-8)


def test_force_routes_agree(ohmic):
    """The convolution and effective-force routes give the same mean shift."""
    force = ForceProfile(times=np.array([0.0, 1.0, 2.0, 4.0]), values=np.array([0.0, 1.0, -0.5, 0.2]))
    for t in (0.7, 2.5):
        conv = driven_mean(ohmic, force, t)
        eff = driven_mean(ohmic, force, t, route="effective_force")
        assert_allclose(conv, eff, rtol=1e-6, atol=1e-9)


def test_tabulated_force_convolution_matches_quadrature(ohmic):
    """Exact exponential integration of the table agrees with brute-force quadrature."""
    force = ForceProfile(times=np.array([0.0, 0.5, 3.0]), values=np.array([1.0, 0.0, 2.0]))
    smooth = ForceProfile(func=lambda s: float(np.interp(s, force.times, force.values)))
    assert_allclose(driven_mean(ohmic, force, 2.0), driven_mean(ohmic, smooth, 2.0), rtol=1e-7, atol=1e-10)


def test_effective_force_at_origin(ohmic):
    assert_allclose(effective_force(ohmic, ForceProfile.constant(2.0), 0.0), [0.0, 2.0])


def test_apply_force_shifts_only_the_mean(ohmic_warm):
    state = GaussianState.coherent(1.0, 1.0)
    pushed = apply_force(ohmic_warm, 1.0, state, ForceProfile.constant(1.0), 1.5)
    free = evolve_gaussian(ohmic_warm, 1.0, state, 1.5)
    assert pushed.cov == free.cov
    assert pushed.mean != free.mean


def test_force_profile_validation(tmp_path):
    with pytest.raises(ConfigError):
        ForceProfile(times=np.array([0.5, 1.0]), values=np.array([1.0, 2.0]))
    with pytest.raises(ConfigError):
        ForceProfile(times=np.array([0.0, 1.0, 0.5]), values=np.array([1.0, 2.0, 3.0]))
    path = tmp_path / "force.csv"
    path.write_text("t,force\n0,1\n1,3\n")
    force = ForceProfile.from_csv(str(path))
    assert_allclose(force(0.5), 2.0)
    with pytest.raises(ConfigError):
        force(2.0)
    with pytest.raises(ConfigError):
        ForceProfile.from_csv(str(tmp_path / "missing.csv"))


def test_high_temperature_decoherence_time():
    """A position superposition decoheres in about 1/(8 M gamma0 T delta_x^2)."""
    model = SpectralModel.ohmic(1.0, 1.0, 0.1, 200.0, T=10.0)
    sup = SuperpositionState(base=GaussianState.coherent(1.0, 1.0), delta_x=0.5)
    profile = decoherence_profile(model, 10.0, sup, np.linspace(0.0, 2.0, 81))
    assert profile.visibility[0] == 1.0
    estimate = 1 / (8 * 0.1 * 10.0 * 0.25)
    assert 0.5 * estimate < profile.t_dec < 2 * estimate
    assert profile.cutoff_time == pytest.approx(1 / 200.0)


def test_momentum_superposition_decoheres_slower():
    """Displacements in momentum only decohere once the dynamics turns them into position."""
    model = SpectralModel.ohmic(1.0, 1.0, 0.1, 200.0, T=10.0)
    grid = np.linspace(0.0, 2.0, 81)
    base = GaussianState.coherent(1.0, 1.0)
    position = decoherence_profile(model, 10.0, SuperpositionState(base=base, delta_x=0.5), grid)
    momentum = decoherence_profile(model, 10.0, SuperpositionState(base=base, delta_x=0.5, direction="momentum"),
                                   grid)
    assert momentum.t_dec is not None
    assert momentum.t_dec > position.t_dec


def test_decoherence_grid_validation(ohmic):
    sup = SuperpositionState(base=GaussianState.coherent(1.0, 1.0), delta_x=1.0)
    with pytest.raises(ValueError):
        decoherence_profile(ohmic, 0.0, sup, [0.0, 1.0, 0.5])
