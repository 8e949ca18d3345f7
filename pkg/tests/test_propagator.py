import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qbm.errors import DegenerateBoundaryError, FallbackAccuracyError, NoStationaryLimitError, PoleError
from qbm.propagator import (Propagator, RegimeLabel, as_propagator, characteristic_rates, classify_regime,
                            final_value_propagator, green_laplace, green_time, inverse_laplace_numeric,
                            late_rates, local_green, local_modes, mode_decomposition, phase_propagator,
                            polynomial_roots, star_parameters, transition_matrix)
from qbm.spectrum import SpectralModel


@pytest.mark.parametrize("fixture", ["ohmic", "sub_ohmic", "supra"])
def test_initial_conditions(fixture, request):
    """G(0) = 0, G'(0) = 1/M, G''(0) = 0."""
    model = request.getfixturevalue(fixture)
    assert abs(green_time(model, 0.0)) < 1e-12
    assert_allclose(green_time(model, 0.0, 1), 1 / model.M, rtol=1e-10)
    assert abs(green_time(model, 0.0, 2)) < 1e-10


def test_phase_propagator_identity_at_origin(ohmic):
    assert_allclose(phase_propagator(ohmic, 0.0), np.eye(2), atol=1e-12)


def test_free_oscillator():
    """Without coupling G = sin(Omega t)/(M Omega)."""
    model = SpectralModel.ohmic(2.0, 1.5, 0.0, 10.0)
    t = np.linspace(0, 20, 41)
    assert_allclose(green_time(model, t), np.sin(1.5 * t) / 3.0, atol=1e-12)


def test_modes_match_laplace_inversion(ohmic, supra):
    """The residue sum equals a numerical Bromwich inversion of G_hat."""
    for model in (ohmic, supra):
        for t in (0.3, 2.0, 7.5):
            numeric = inverse_laplace_numeric(lambda s: green_laplace(model, s), t, scale=1.0)
            assert_allclose(green_time(model, t), numeric, atol=1e-8)


def test_sub_ohmic_matches_laplace_inversion(sub_ohmic):
    """erfc modes reproduce G for the sqrt(s) kernel."""
    for t in (0.5, 3.0, 10.0):
        numeric = inverse_laplace_numeric(lambda s: green_laplace(sub_ohmic, s), t)
        assert_allclose(green_time(sub_ohmic, t), numeric, atol=1e-7)


def test_sub_ohmic_power_law_tail(sub_ohmic):
    """After the exponentially damped part is removed, a slowly decaying remainder is left."""
    modes = mode_decomposition(sub_ohmic)
    t1 = np.linspace(20, 30, 21)
    t2 = np.linspace(40, 50, 21)
    r1 = np.abs(modes.evaluate(t1) - modes.local_part(t1))
    r2 = np.abs(modes.evaluate(t2) - modes.local_part(t2))
    assert np.max(r2) < np.max(r1)
    assert np.max(r2) > 1e-12


def test_sub_ohmic_tail_exponent(sub_ohmic):
    """The non-exponential remainder decays as a power law t^-p, fitted over [20, 50]."""
    modes = mode_decomposition(sub_ohmic)
    t = np.geomspace(20.0, 50.0, 31)
    r = modes.evaluate(t) - modes.local_part(t)
    assert np.all(r > 0)
    p = -np.polyfit(np.log(t), np.log(r), 1)[0]
    assert 1.0 < p < 2.0


def test_sub_ohmic_det_phi_changes_sign(sub_ohmic):
    """det Phi starts at 1 and turns negative once the power-law tail dominates G."""
    t = np.linspace(0.0, 80.0, 1601)
    det = np.array([np.linalg.det(phase_propagator(sub_ohmic, s)) for s in t])
    assert_allclose(det[0], 1.0, atol=1e-10)
    assert det[-1] < 0
    assert np.count_nonzero(np.diff(np.sign(det)) != 0) >= 1


def test_laplace_inversion_reference():
    """1/(s+1) inverts to e^-t with both methods."""
    for method in ("talbot", "dehoog"):
        assert_allclose(inverse_laplace_numeric(lambda s: 1 / (s + 1), 1.3, method=method), np.exp(-1.3),
                        rtol=1e-8)
    with pytest.raises(ValueError):
        inverse_laplace_numeric(lambda s: 1 / (s + 1), 0.0)


def test_laplace_inversion_uncertifiable():
    """A target the rule cannot resolve is reported rather than returned."""
    with pytest.raises(FallbackAccuracyError):
        inverse_laplace_numeric(lambda s: np.exp(-s) / s, 1.0, tol=1e-14)


def test_green_laplace_pole():
    model = SpectralModel.ohmic(1.0, 1.0, 0.0, 10.0)
    with pytest.raises(PoleError):
        green_laplace(model, 1j)


def test_transition_property(ohmic):
    """The local propagator composes; the nonlocal one does not."""
    local = Propagator.local(1.0, 1.0, 0.1)
    a, b, c = 2.5, 0.3, 0.1
    assert_allclose(transition_matrix(local, a, b) @ transition_matrix(local, b, c),
                    transition_matrix(local, a, c), atol=1e-12)
    lhs = transition_matrix(ohmic, a, b) @ transition_matrix(ohmic, b, c)
    assert np.max(np.abs(lhs - transition_matrix(ohmic, a, c))) > 1e-6


def test_local_green_closed_form():
    t = np.linspace(0, 10, 11)
    w = np.sqrt(1 - 0.04)
    assert_allclose(local_green(1.0, 1.0, 0.2, t), np.sin(w * t) * np.exp(-0.2 * t) / w, atol=1e-14)
    with pytest.raises(DegenerateBoundaryError):
        local_modes(1.0, 1.0, 1.0)


def test_final_value_propagator(ohmic):
    """At tau = tau' = t it reduces to -Phi(0) + I/2."""
    assert_allclose(final_value_propagator(ohmic, 3.0, 3.0, 3.0), -0.5 * np.eye(2), atol=1e-12)
    with pytest.raises(ValueError):
        final_value_propagator(ohmic, 4.0, 1.0, 3.0)


@settings(max_examples=50, deadline=None)
@given(gamma0=st.floats(1e-3, 10.0), Lambda=st.floats(0.5, 1e3), Omega=st.floats(0.2, 5.0))
def test_star_parameters_factor_the_cubic(gamma0, Lambda, Omega):
    """(s+Lambda*)(s^2 + 2 gamma* s + Omega*^2) reproduces the ohmic denominator."""
    star = star_parameters(1.0, Omega, gamma0, Lambda)
    cubic = np.polymul([1.0, star.Lambda_star], [1.0, 2 * star.gamma_star, star.Omega_star ** 2])
    want = [1.0, Lambda, Omega ** 2 + 2 * gamma0 * Lambda, Omega ** 2 * Lambda]
    scale = np.abs(want)
    assert np.all(np.abs(cubic - want) <= 1e-7 * scale)


def test_star_parameters_weak_coupling_limit():
    """gamma* -> gamma0 and Omega* -> Omega when Lambda dominates."""
    star = star_parameters(1.0, 1.0, 0.01, 1e4)
    assert_allclose(star.gamma_star, 0.01, rtol=1e-4)
    assert_allclose(star.Omega_star, 1.0, rtol=1e-4)
    assert_allclose(star.Lambda_star, 1e4, rtol=1e-5)


@pytest.mark.parametrize("gamma0,Lambda,label", [
    (0.1, 20.0, RegimeLabel.UNDERDAMPED),
    (1000.0, 10.0, RegimeLabel.STRONG_COUPLING),
    (5.0, 1000.0, RegimeLabel.OVERDAMPED),
])
def test_classify_regime(gamma0, Lambda, label):
    assert classify_regime(1.0, 1.0, gamma0, Lambda) is label


def test_characteristic_rates_stable(ohmic, supra):
    """Every rate of a physical rational model decays."""
    for model in (ohmic, supra):
        assert np.all(characteristic_rates(model).real < 0)


def test_late_rates(ohmic, sub_ohmic):
    """The slow pair gives (gamma*, Omega*^2); a power-law tail has none."""
    star = star_parameters(1.0, 1.0, 0.1, 20.0)
    gamma, omega2 = late_rates(ohmic)
    assert_allclose(gamma, star.gamma_star, rtol=1e-10)
    assert_allclose(omega2, star.Omega_star ** 2, rtol=1e-10)
    with pytest.raises(NoStationaryLimitError):
        late_rates(sub_ohmic)


def test_polynomial_roots_polished():
    roots = polynomial_roots([1.0, -6.0, 11.0, -6.0])
    assert_allclose(np.sort(roots.real), [1.0, 2.0, 3.0], rtol=1e-13)


def test_negative_time_rejected(ohmic):
    with pytest.raises(ValueError):
        as_propagator(ohmic).green(-1.0)
