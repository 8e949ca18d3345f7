"""Retarded Green function G(t) of the nonlocal Langevin equation and its lifts.

    G_hat(s) = 1 / (M (s^2 + 2 s gamma_hat(s) + Omega^2))

The rational families (ohmic, supra-ohmic) have a polynomial denominator and
G is a finite sum of complex exponentials. The sub-ohmic family is a
polynomial in sqrt(s) and G is a sum of erfc modes. Tabulated spectra are
inverted numerically.

    Phi(t) = [[M G'(t),    G(t)  ],
              [M^2 G''(t), M G'(t)]]
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import NamedTuple, Optional, Tuple

import numpy as np

from qbm import specfun
from qbm.config import settings
from qbm.errors import (ConfigError, DegenerateBoundaryError, DivergenceError,
                        FallbackAccuracyError, NoStationaryLimitError, PoleError,
                        RootFindingError, SingularTransitionError)
from qbm.spectrum import SpectralModel, damping_laplace, damping_time
from qbm.utils import logger


class RegimeLabel(str, Enum):
    UNDERDAMPED = "Underdamped"
    OVERDAMPED = "Overdamped"
    STRONG_COUPLING = "StrongCoupling"


class StarParams(NamedTuple):
    gamma_star: float
    Omega_star: float
    Lambda_star: float
    Omega_tilde_star: complex  # imaginary when all three roots are real


@dataclass(frozen=True)
class ModeDecomposition:
    """G(t) = Re[sum_k A_k e^{f_k t}] + Re[sum_k a_k r_k erfcx(-r_k sqrt(t))]."""
    M: float
    exp_modes: Tuple[Tuple[complex, complex], ...] = ()
    erfc_modes: Tuple[Tuple[complex, complex], ...] = ()

    def evaluate(self, t, order=0):
        if order not in (0, 1, 2, 3):
            raise ValueError(f"derivative order must be 0..3, got {order!r}")
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for amp, f in self.exp_modes:
            out += amp * f ** order * np.exp(f * t)
        if self.erfc_modes:
            out += self._erfc_sum(t, order)
        value = out.real
        return value if value.ndim else float(value)

    def _erfc_sum(self, t, order):
        if order == 3 and np.any(t == 0):
            raise DivergenceError("G''' of the sub-ohmic propagator diverges as t^(-1/2) at t=0")
        root_t = np.sqrt(t)
        out = np.zeros(t.shape, dtype=complex)
        for amp, r in self.erfc_modes:
            u = specfun.erfcx(-r * root_t.astype(complex))
            out += amp * r ** (2 * order + 1) * u
            if order == 3:
                out += amp * r ** 6 / np.sqrt(np.pi * t)
        return out

    def local_part(self, t):
        """Exponentially decaying part of an erfc decomposition (modes with Re r > 0)."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape, dtype=complex)
        for amp, r in self.erfc_modes:
            if r.real > 0:
                out += 2 * amp * r * np.exp(r * r * t)
        return out.real if out.ndim else float(out.real)


def _polish(coeffs, roots, tol=1e-12, max_iter=50):
    dcoeffs = np.polyder(coeffs)
    absc = np.abs(coeffs)
    out = []
    for z in roots:
        z = complex(z)
        for _ in range(max_iter):
            p = np.polyval(coeffs, z)
            scale = np.polyval(absc, abs(z))
            if abs(p) <= tol * scale:
                break
            dp = np.polyval(dcoeffs, z)
            if dp == 0:
                break
            z -= p / dp
        p = np.polyval(coeffs, z)
        if not abs(p) <= tol * np.polyval(absc, abs(z)) * 10:
            raise RootFindingError(f"root polishing stalled at s={z!r} (residual {abs(p):.3g})")
        out.append(z)
    return np.array(out)


def polynomial_roots(coeffs):
    coeffs = np.asarray(coeffs, dtype=float)
    roots = _polish(coeffs, np.roots(coeffs))
    roots = np.where(np.abs(roots.imag) <= 1e-13 * np.abs(roots), roots.real, roots)
    return roots


def _check_distinct(roots, where):
    scale = max(np.max(np.abs(roots)), 1e-300)
    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            if abs(roots[i] - roots[j]) < 1e-7 * scale:
                raise DegenerateBoundaryError(
                    f"{where}: repeated characteristic root near s={complex(roots[i]):.6g}")


def _rational_parts(model):
    fam, M, Om2 = model.family, model.M, model.Omega ** 2
    L = fam.Lambda
    if fam.kind == "ohmic":
        den = np.array([1.0, L, Om2 + 2 * fam.gamma0 * L, Om2 * L])
        num = np.array([1.0, L]) / M
    else:
        g2 = fam.gamma2
        den = np.array([1.0, 2 * L, L * L + Om2 + g2 * L, 2 * L * Om2, Om2 * L * L])
        num = np.array([1.0, 2 * L, L * L]) / M
    return num, den


def _sub_ohmic_quartic(model):
    c = 2 * np.sqrt(2 * model.omega_star) * model.family.gamma_star
    return np.array([1.0, 0.0, 0.0, c, model.Omega ** 2])


def _exp_modes(num, den, where):
    roots = polynomial_roots(den)
    _check_distinct(roots, where)
    dden = np.polyder(den)
    modes = []
    for f in roots:
        amp = np.polyval(num, f) / np.polyval(dden, f)
        modes.append((complex(amp), complex(f)))
    return tuple(modes)


@lru_cache(maxsize=128)
def mode_decomposition(model: SpectralModel) -> ModeDecomposition:
    if model.is_rational:
        num, den = _rational_parts(model)
        return ModeDecomposition(model.M, exp_modes=_exp_modes(num, den, model.kind))
    if model.kind == "sub_ohmic":
        q = _sub_ohmic_quartic(model)
        roots = polynomial_roots(q)
        _check_distinct(roots, "sub_ohmic")
        dq = np.polyder(q)
        modes = tuple((complex(1 / (model.M * np.polyval(dq, r))), complex(r)) for r in roots)
        return ModeDecomposition(model.M, erfc_modes=modes)
    raise ConfigError("tabulated spectra have no closed-form mode decomposition")


def local_modes(M, Omega, gamma):
    """Mode pair of G_R(t) = sin(W t) e^{-gamma t} / (M W), W = sqrt(Omega^2 - gamma^2)."""
    w = np.sqrt(complex(Omega * Omega - gamma * gamma))
    if abs(w) < 1e-9 * max(Omega, gamma):
        raise DegenerateBoundaryError(f"critically damped local propagator (gamma={gamma!r}, Omega={Omega!r})")
    f = -gamma + 1j * w
    amp = 1 / (2j * M * w)
    return ModeDecomposition(M, exp_modes=((amp, f), (-amp, -gamma - 1j * w)))


def local_green(M, Omega, gamma, t, order=0):
    return local_modes(M, Omega, gamma).evaluate(t, order)


def green_laplace(model: SpectralModel, s):
    s = complex(s)
    den = model.M * (s * s + 2 * s * damping_laplace(model, s) + model.Omega ** 2)
    if abs(den) <= 1e-14 * model.M * max(abs(s) ** 2, model.Omega ** 2):
        raise PoleError(f"G_hat has a pole at s={s!r}")
    return 1 / den


def _talbot(f_hat, t, degree):
    theta = np.arange(degree) * np.pi / degree
    cot = np.zeros(degree)
    cot[1:] = 1 / np.tan(theta[1:])
    r = 0.4 * degree
    p = r / t * theta * (cot + 1j)
    p[0] = r / t
    fp = np.array([f_hat(x) for x in p], dtype=complex)
    weights = np.exp(t * p) * (1 + 1j * theta * (1 + cot ** 2) - 1j * cot)
    weights[0] = 0.5 * np.exp(r)
    return float((2 / (5 * t) * np.dot(weights, fp)).real)


def _dehoog(f_hat, t, order, alpha=0.0, tol=1e-12):
    T = 2 * t
    gamma = alpha - np.log(tol) / (2 * T)
    n = 2 * order + 1
    p = gamma + 1j * np.pi * np.arange(n) / T
    fp = np.array([f_hat(x) for x in p], dtype=complex)

    # quotient-difference table
    e = np.zeros((n, order + 1), dtype=complex)
    q = np.zeros((n, order), dtype=complex)
    q[0, 0] = fp[1] / (fp[0] / 2)
    for i in range(1, 2 * order):
        q[i, 0] = fp[i + 1] / fp[i]
    for r in range(1, order + 1):
        mr = 2 * (order - r)
        e[0:mr, r] = q[1:mr + 1, r - 1] - q[0:mr, r - 1] + e[1:mr + 1, r - 1]
        if r != order:
            mr = 2 * (order - r - 1) + 1
            for i in range(mr):
                q[i, r] = q[i + 1, r - 1] * e[i + 1, r] / e[i, r]

    d = np.zeros(n, dtype=complex)
    d[0] = fp[0] / 2
    for r in range(1, order + 1):
        d[2 * r - 1] = -q[0, r - 1]
        d[2 * r] = -e[0, r]

    A = np.zeros(n + 1, dtype=complex)
    B = np.zeros(n + 1, dtype=complex)
    A[1], B[0], B[1] = d[0], 1.0, 1.0
    z = np.exp(1j * np.pi * t / T)
    for i in range(1, 2 * order):
        A[i + 1] = A[i] + d[i] * A[i - 1] * z
        B[i + 1] = B[i] + d[i] * B[i - 1] * z
    # improved remainder of the continued fraction
    brem = (1 + (d[2 * order - 1] - d[2 * order]) * z) / 2
    rem = -brem * (1 - np.sqrt(1 + d[2 * order] * z / brem ** 2))
    A[n] = A[2 * order] + rem * A[2 * order - 1]
    B[n] = B[2 * order] + rem * B[2 * order - 1]
    return float(np.exp(gamma * t) / T * (A[n] / B[n]).real)


def inverse_laplace_numeric(f_hat, t, tol=None, method="talbot", scale=1.0):
    """Invert ``f_hat`` at t > 0 and certify the result against a cheaper/finer rule.

    Fixed Talbot compares degrees N and N-8; de Hoog compares orders N and 2N.
    Talbot needs every singularity left of its contour, so functions with
    singularities on the imaginary axis must use de Hoog.
    """
    tol = settings.FALLBACK_TOL if tol is None else tol
    t = float(t)
    if not t > 0:
        raise ValueError(f"inverse_laplace_numeric needs t > 0, got t={t!r}")
    if method == "talbot":
        degree = settings.TALBOT_DEGREE
        value, check = _talbot(f_hat, t, degree), _talbot(f_hat, t, degree - 8)
    elif method == "dehoog":
        order = settings.DEHOOG_ORDER
        value, check = _dehoog(f_hat, t, 2 * order), _dehoog(f_hat, t, order)
    else:
        raise ValueError(f"unknown inversion method {method!r}")
    err = abs(value - check)
    if not np.isfinite(value) or err > tol * max(abs(value), scale):
        raise FallbackAccuracyError(
            f"{method} inversion at t={t:.6g} could not certify tol={tol:.1e} (estimate {err:.3g})")
    return value


class Propagator:
    """G and its derivatives for one model, mode sums when available.

    Build through :func:`get_propagator` (cached per model) or
    :meth:`Propagator.local` for strictly local dissipation.
    """

    def __init__(self, M, modes: Optional[ModeDecomposition] = None, model: Optional[SpectralModel] = None,
                 tol=None):
        self.M = M
        self.modes = modes
        self.model = model
        self.tol = settings.FALLBACK_TOL if tol is None else tol
        if modes is None and model is None:
            raise ValueError("Propagator needs a mode decomposition or a model to invert")

    @classmethod
    def local(cls, M, Omega, gamma):
        return cls(M, modes=local_modes(M, Omega, gamma))

    def _numeric(self, t, order):
        model, M = self.model, self.M
        if t == 0:
            third = -(model.Omega ** 2 + 2 * damping_time(model, 0.0, method="quad")) / M
            return (0.0, 1 / M, 0.0, third)[order]
        G = lambda s: green_laplace(model, s)
        f_hat = (G,
                 lambda s: s * G(s),
                 lambda s: s * s * G(s) - 1 / M,
                 lambda s: s ** 3 * G(s) - s / M)[order]
        scale = model.Omega ** (order - 1) / M
        return inverse_laplace_numeric(f_hat, t, tol=self.tol, method="dehoog", scale=scale)

    def green(self, t, order=0):
        if np.any(np.asarray(t) < 0):
            raise ValueError(f"the retarded propagator is defined for t >= 0, got t={t!r}")
        if self.modes is not None:
            return self.modes.evaluate(t, order)
        if np.ndim(t):
            return np.array([self._numeric(float(x), order) for x in np.ravel(t)]).reshape(np.shape(t))
        return self._numeric(float(t), order)

    def phase(self, t):
        M = self.M
        g, g1, g2 = (self.green(t, n) for n in range(3))
        return np.array([[M * g1, g], [M * M * g2, M * g1]])

    def phase_rate(self, t):
        M = self.M
        g1, g2, g3 = (self.green(t, n) for n in range(1, 4))
        return np.array([[M * g2, g1], [M * M * g3, M * g2]])


@lru_cache(maxsize=128)
def get_propagator(model: SpectralModel) -> Propagator:
    if model.kind == "custom":
        logger.info("No closed form for a tabulated spectrum; G(t) by de Hoog inversion")
        return Propagator(model.M, model=model)
    modes = mode_decomposition(model)
    logger.info("Propagator for %s model: %d exponential + %d erfc modes",
                model.kind, len(modes.exp_modes), len(modes.erfc_modes))
    return Propagator(model.M, modes=modes, model=model)


def as_propagator(model) -> Propagator:
    return model if isinstance(model, Propagator) else get_propagator(model)


def green_time(model, t, order=0):
    return as_propagator(model).green(t, order)


def phase_propagator(model, t):
    return as_propagator(model).phase(t)


def _checked_inverse(phi, t):
    det = np.linalg.det(phi)
    if abs(det) < settings.SINGULAR_THRESHOLD * np.sum(phi * phi):
        raise SingularTransitionError(f"Phi(t) is singular at t={t:.6g} (det={det:.3g})", t=t)
    return np.linalg.inv(phi)


def transition_matrix(model, t, tau):
    """Phi(t, tau) = Phi(t) Phi(tau)^-1."""
    prop = as_propagator(model)
    return prop.phase(t) @ _checked_inverse(prop.phase(tau), tau)


def final_value_propagator(model, tau, tau_prime, t_final):
    """Phi_f(tau, tau') = -Phi(tau, t) Phi(t - tau') + theta(tau - tau') Phi(tau - tau'), theta(0) = 1/2."""
    if not (0 <= tau <= t_final and 0 <= tau_prime <= t_final):
        raise ValueError(f"need 0 <= tau, tau' <= t_final, got tau={tau!r}, tau'={tau_prime!r}, t={t_final!r}")
    prop = as_propagator(model)
    out = -transition_matrix(prop, tau, t_final) @ prop.phase(t_final - tau_prime)
    if tau > tau_prime:
        out = out + prop.phase(tau - tau_prime)
    elif tau == tau_prime:
        out = out + 0.5 * np.eye(2)
    return out


def characteristic_rates(model: SpectralModel):
    """Roots of the characteristic denominator: rates f for rational models, roots in sqrt(s) for sub-ohmic."""
    if model.is_rational:
        return np.array([f for _, f in mode_decomposition(model).exp_modes])
    if model.kind == "sub_ohmic":
        return np.array([r for _, r in mode_decomposition(model).erfc_modes])
    raise ConfigError("characteristic rates need a built-in spectral family")


def _ohmic_roots(Omega, gamma0, Lambda):
    den = np.array([1.0, Lambda, Omega ** 2 + 2 * gamma0 * Lambda, Omega ** 2 * Lambda])
    return polynomial_roots(den)


def _star_from_roots(roots):
    real = [complex(r).real for r in roots if abs(complex(r).imag) == 0]
    if len(real) == 3:
        real.sort(key=abs)
        lam = -real[2]
        gamma = -(real[0] + real[1]) / 2
        omega2 = real[0] * real[1]
        return StarParams(gamma, float(np.sqrt(omega2)), lam, 1j * np.sqrt(max(gamma * gamma - omega2, 0.0)))
    pair = [complex(r) for r in roots if complex(r).imag > 0][0]
    lam = -real[0]
    gamma = -pair.real
    return StarParams(gamma, abs(pair), lam, complex(abs(pair.imag)))


def star_parameters(M, Omega, gamma0, Lambda) -> StarParams:
    """Exact factoring (s^2+Omega^2)(s+Lambda) + 2 gamma0 Lambda s = (s+Lambda*)(s^2 + 2 gamma* s + Omega*^2)."""
    if not (M > 0 and Omega > 0 and gamma0 > 0 and Lambda > 0):
        raise ConfigError(f"star parameters need positive inputs, got M={M}, Omega={Omega}, "
                          f"gamma0={gamma0}, Lambda={Lambda}")
    return _star_from_roots(_ohmic_roots(Omega, gamma0, Lambda))


def classify_regime(M, Omega, gamma0, Lambda) -> RegimeLabel:
    roots = _ohmic_roots(Omega, gamma0, Lambda)
    _check_distinct(roots, "classify_regime")
    star = _star_from_roots(roots)
    if np.iscomplexobj(star.Omega_tilde_star) and star.Omega_tilde_star.imag != 0:
        return RegimeLabel.OVERDAMPED
    if abs(star.Lambda_star - star.gamma_star) < 1e-9 * Lambda:
        raise DegenerateBoundaryError(
            f"Lambda*={star.Lambda_star:.6g} equals gamma*={star.gamma_star:.6g}: regime boundary")
    if star.Lambda_star < star.gamma_star:
        return RegimeLabel.STRONG_COUPLING
    return RegimeLabel.UNDERDAMPED


def late_rates(model):
    """(Gamma_inf, Omega_R_inf^2) of the slowest oscillating pair of characteristic rates.

    Without a complex pair the two slowest real rates are paired instead.
    """
    if isinstance(model, Propagator):
        rates = np.array([f for _, f in model.modes.exp_modes]) if model.modes and model.modes.exp_modes else None
    elif model.is_rational:
        rates = characteristic_rates(model)
    else:
        rates = None
    if rates is None:
        raise NoStationaryLimitError("no effectively local late-time regime: the propagator decays as a power law")
    if np.any(rates.real >= 0):
        raise NoStationaryLimitError(f"characteristic rate with Re f >= 0: {rates[np.argmax(rates.real)]!r}")
    pairs = [f for f in rates if f.imag > 0]
    if pairs:
        f = max(pairs, key=lambda z: z.real)
        return float(-f.real), float(abs(f) ** 2)
    real = sorted((f.real for f in rates), reverse=True)[:2]
    return float(-(real[0] + real[1]) / 2), float(real[0] * real[1])


def late_pseudo_hamiltonian(model):
    gamma, omega2 = late_rates(model)
    M = model.M
    return np.array([[0.0, -1 / M], [M * omega2, 2 * gamma]])
