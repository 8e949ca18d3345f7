"""Time-dependent master-equation coefficients.

The pseudo-Hamiltonian H(t) = -Phi'(t) Phi(t)^-1 carries the renormalized
frequency and the damping rate; the diffusion matrix follows from the exact
thermal covariance through D = (H sigma_T + sigma_T H^T + sigma_T') / 2.
For the ohmic family at large cutoff the coefficients are also available in
closed form as their late values plus a decaying correction, written as
operators acting on a single decay function DF(t).
"""
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_lyapunov
from scipy.optimize import brentq

from qbm import specfun
from qbm.covariance import late_covariance, thermal_state
from qbm.errors import (ApplicabilityWarning, DegenerateBoundaryError, SingularTransitionError,
                        StabilityError)
from qbm.propagator import _checked_inverse, as_propagator, late_pseudo_hamiltonian, local_green
from qbm.spectrum import SpectralModel
from qbm.utils import logger, map_grid, sym

# half-width, in units of Lambda/2piT, of the interpolation band around integers
MATSUBARA_BAND = 1e-4


@dataclass(frozen=True)
class PseudoHamiltonian:
    M: float
    Omega_R_sq: float
    Gamma: float

    @property
    def matrix(self):
        return np.array([[0.0, -1 / self.M], [self.M * self.Omega_R_sq, 2 * self.Gamma]])

    @classmethod
    def from_matrix(cls, M, H):
        return cls(M, float(H[1, 0]) / M, float(H[1, 1]) / 2)


@dataclass(frozen=True)
class DiffusionMatrix:
    M: float
    D_xp: float
    D_pp: float

    @property
    def matrix(self):
        return np.array([[0.0, -self.D_xp / 2], [-self.D_xp / 2, self.M * self.D_pp]])

    @classmethod
    def from_matrix(cls, M, D):
        D = sym(np.asarray(D, dtype=float))
        return cls(M, float(-2 * D[0, 1]), float(D[1, 1]) / M)


@dataclass(frozen=True)
class CoefficientSeries:
    t: np.ndarray
    Omega_R_sq: np.ndarray
    Gamma: np.ndarray
    D_xp: np.ndarray
    D_pp: np.ndarray
    poles: Tuple[float, ...] = field(default=())


class LateCoefficients(NamedTuple):
    Gamma_inf: float
    OmegaR_inf: float
    Dxp_inf: float
    Dpp_inf: float


class LargeCutoffDiffusion(NamedTuple):
    D_xp: float
    D_pp: float


def coefficients_from_hamiltonian(H):
    """(Omega_R^2, Gamma) read off the fixed-structure entries of H."""
    H = np.asarray(H)
    M = -1 / H[0, 1]
    return float(H[1, 0] / M), float(H[1, 1] / 2)


def _hamiltonian(prop, t):
    phi = prop.phase(t)
    return -prop.phase_rate(t) @ _checked_inverse(phi, t)


def pseudo_hamiltonian(model, t) -> PseudoHamiltonian:
    prop = as_propagator(model)
    return PseudoHamiltonian.from_matrix(prop.M, _hamiltonian(prop, float(t)))


def diffusion_from_covariance(H, sigma):
    """D = (H sigma + sigma H^T) / 2, the stationary inverse of the Lyapunov equation."""
    H, sigma = np.asarray(H), np.asarray(sigma)
    return sym(0.5 * (H @ sigma + sigma @ H.T))


def lyapunov_solve(H, D):
    """sigma with H sigma + sigma H^T = 2 D."""
    H = np.asarray(H, dtype=float)
    if np.any(np.linalg.eigvals(H).real <= 0):
        raise StabilityError("Lyapunov equation needs H with eigenvalues in the right half plane")
    return sym(solve_continuous_lyapunov(H, 2 * np.asarray(D, dtype=float)))


def lyapunov_residual(H_inf, D_inf, sigma_inf):
    H, D, sigma = (np.asarray(a, dtype=float) for a in (H_inf, D_inf, sigma_inf))
    return float(np.max(np.abs(H @ sigma + sigma @ H.T - 2 * D)))


def diffusion_matrix(model: SpectralModel, t, T=None) -> DiffusionMatrix:
    t = float(t)
    M = model.M
    if t == 0:
        return DiffusionMatrix(M, 0.0, 0.0)
    prop = as_propagator(model)
    H = _hamiltonian(prop, t)
    sigma, dsigma = thermal_state(model, T, t)
    return DiffusionMatrix.from_matrix(M, 0.5 * (H @ sigma + sigma @ H.T + dsigma))


def _det_phase(prop, t):
    return float(np.linalg.det(prop.phase(t)))


def _singular_times(prop, grid):
    dets = np.array([_det_phase(prop, t) for t in grid])
    roots = []
    for i in np.flatnonzero(np.sign(dets[:-1]) * np.sign(dets[1:]) < 0):
        roots.append(brentq(lambda s: _det_phase(prop, s), grid[i], grid[i + 1], xtol=1e-14))
    roots += [float(t) for t, d in zip(grid, dets) if d == 0]
    return sorted(roots)


def coefficient_series(model: SpectralModel, grid, T=None, threads=None) -> CoefficientSeries:
    """Coefficients on a time grid; values within a guard band around det Phi = 0 are NaN."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise ValueError("coefficient grid must be strictly increasing with at least two points")
    prop = as_propagator(model)
    poles = _singular_times(prop, grid)
    guard = 1e-3 * 2 * np.pi / model.Omega
    if poles:
        logger.warning("det Phi vanishes at %d time(s) in [%g, %g]; coefficients diverge there",
                       len(poles), grid[0], grid[-1])

    def point(t):
        if any(abs(t - p) < guard for p in poles):
            return (np.nan,) * 4, None
        try:
            H = pseudo_hamiltonian(prop, t)
            D = diffusion_matrix(model, t, T)
        except SingularTransitionError as e:
            return (np.nan,) * 4, e.t
        return (H.Omega_R_sq, H.Gamma, D.D_xp, D.D_pp), None

    rows = map_grid(point, grid, threads=threads, desc="coefficients")
    values = np.array([r[0] for r in rows], dtype=float)
    extra = [r[1] for r in rows if r[1] is not None]
    return CoefficientSeries(grid, values[:, 0], values[:, 1], values[:, 2], values[:, 3],
                             tuple(sorted(set(poles + extra))))


def late_time_coefficients(model: SpectralModel, T=None) -> LateCoefficients:
    """Stationary coefficients; the diffusion follows from sigma_inf through the Lyapunov relation."""
    H = late_pseudo_hamiltonian(model)
    sigma = late_covariance(model, T).matrix
    D = DiffusionMatrix.from_matrix(model.M, diffusion_from_covariance(H, sigma))
    omega2, gamma = coefficients_from_hamiltonian(H)
    return LateCoefficients(gamma, float(np.sqrt(omega2)), D.D_xp, D.D_pp)


def characteristic_propagator(model, t, rtol=1e-10, atol=1e-12):
    """Phi_k(t) from Phi_k' = H(t)^T Phi_k, Phi_k(0) = I; equals Phi(t)^-T."""
    prop = as_propagator(model)
    t = float(t)
    if t == 0:
        return np.eye(2)

    def rhs(s, y):
        H = _hamiltonian(prop, s)
        return (H.T @ y.reshape(2, 2)).ravel()

    sol = solve_ivp(rhs, (0.0, t), np.eye(2).ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise SingularTransitionError(f"characteristic-curve integration failed before t={t:.6g}: {sol.message}",
                                      t=float(sol.t[-1]))
    return sol.y[:, -1].reshape(2, 2)


def _residues(den, num=1.0):
    poles = np.roots(den)
    gaps = np.abs(poles[:, None] - poles[None, :])
    np.fill_diagonal(gaps, np.inf)
    if np.min(gaps) < 1e-7 * np.max(np.abs(poles)):
        raise DegenerateBoundaryError("repeated pole in the decay-function kernel (critical damping)")
    dden = np.polyder(den)
    res = np.array([num / np.polyval(dden, p) for p in poles])
    return poles, res


def thermal_sum(Omega, gamma0, Lambda, T, t, derivative=False, budget=None):
    """Sum_k x^2/(x^2 - k^2) k e^{-2 pi T k t} / ((k + gamma0/2piT)^2 + (Omega_tilde/2piT)^2), x = Lambda/2piT.

    Evaluated by partial fractions in k as a combination of Lerch-type sums;
    ``derivative`` returns d/dt instead. The k = x term diverges as
    Lambda/2piT approaches a positive integer; decay_function bridges that.
    """
    if not (T > 0 and t > 0):
        raise ValueError(f"thermal_sum needs T > 0 and t > 0, got T={T!r}, t={t!r}")
    s = 2 * np.pi * T
    x = Lambda / s
    den = np.polymul([-1.0, 0.0, x * x], [1.0, 2 * gamma0 / s, (Omega / s) ** 2])
    poles, res = _residues(den)
    res = res * x * x * poles
    lam = s * t
    phi = np.array([specfun.lerch_phi1(-p, lam, budget) for p in poles])
    if derivative:
        return float(np.real(-s * np.sum(res * poles * phi)))
    return float(np.real(np.sum(res * phi)))


def _scaled_tail(p, t, a_i):
    # e^{-p t} int_{a_i}^inf e^{-(a - p) t} / (a - p) da, principal value for a_i < p real
    if abs(p.imag) < 1e-12 * abs(p) and p.real > a_i:
        return -np.exp(-a_i * t) * specfun.exp_integral_ei_scaled((p.real - a_i) * t)
    return np.exp(-a_i * t) * specfun.exp_integral_e1_scaled(complex((a_i - p) * t))


def _decay_residue_form(Omega, gamma0, Lambda, t, sign, a_i, derivative):
    den = np.polymul([sign, 0.0, Lambda ** 2], [1.0, 2 * gamma0, Omega ** 2])
    poles, res = _residues(den, Lambda ** 2)
    tails = np.array([_scaled_tail(complex(p), t, a_i) for p in poles])
    if derivative:
        return float(-(2 / np.pi) * np.real(np.sum(res * poles ** 2 * tails)))
    return float((2 / np.pi) * np.real(np.sum(res * poles * tails)))


def decay_function(M, Omega, gamma0, Lambda, T, t, method="exact", k_i=1.0, derivative=False):
    """DF(t) of the large-cutoff ohmic coefficients (or dDF/dt with ``derivative``).

    "exact" uses the Matsubara form (Lerch sums) at T > 0 and exponential
    integrals at T = 0; "qualitative" replaces the Matsubara sum by an
    integral from 2 pi T k_i with a soft cutoff.
    """
    if not t > 0:
        raise ValueError(f"decay_function needs t > 0, got t={t!r}")
    if method == "qualitative":
        return _decay_residue_form(Omega, gamma0, Lambda, t, 1.0, 2 * np.pi * T * k_i, derivative)
    if method != "exact":
        raise ValueError(f"method must be 'exact' or 'qualitative', got {method!r}")
    if T == 0:
        return _decay_residue_form(Omega, gamma0, Lambda, t, -1.0, 0.0, derivative)
    s = 2 * np.pi * T
    x = Lambda / s
    n = round(x)
    if n >= 1 and abs(x - n) < MATSUBARA_BAND:
        # cot(Lambda/2T) and the k = n Lerch term have opposite poles at integer
        # Lambda/2piT; DF itself is smooth there, so interpolate across the band
        lo, hi = n - MATSUBARA_BAND, n + MATSUBARA_BAND
        w = (x - lo) / (hi - lo)
        f_lo = _decay_matsubara(Omega, gamma0, s * lo, T, t, derivative)
        f_hi = _decay_matsubara(Omega, gamma0, s * hi, T, t, derivative)
        return float((1 - w) * f_lo + w * f_hi)
    return _decay_matsubara(Omega, gamma0, Lambda, T, t, derivative)


def _decay_matsubara(Omega, gamma0, Lambda, T, t, derivative):
    P = Lambda ** 2 + 2 * gamma0 * Lambda + Omega ** 2
    edge = -Lambda ** 2 / np.tan(Lambda / (2 * T)) * np.exp(-Lambda * t) / P
    ts = thermal_sum(Omega, gamma0, Lambda, T, t, derivative)
    if derivative:
        return float(-Lambda * edge + (2 / np.pi) * ts)
    return float(edge + (2 / np.pi) * ts)


def _harmonic_gap(Lambda, p, T):
    # H(Lambda/2piT) - H(p/2piT), which tends to log(Lambda/p) as T -> 0
    if T == 0:
        return np.log(Lambda / complex(p))
    s = 2 * np.pi * T
    return complex(specfun.harmonic_number(Lambda / s)) - complex(specfun.harmonic_number(complex(p) / s))


def late_diffusion_ohmic_largecutoff(M, Omega, gamma0, Lambda, T) -> LargeCutoffDiffusion:
    """Late diffusion of the local-propagator approximation, exact in the noise kernel.

    The Matsubara sum of the contour integrals collapses onto harmonic numbers
    at the two local rates p = gamma0 +- i Omega_tilde:

        D_xp = -2 gamma0 T Lambda / P + (2/pi) gamma0 Lambda^2 S_1
        D_pp = 2 gamma0 T Lambda^2 / P - (2/pi) gamma0 Lambda^2 S_2

    with P = Lambda^2 + 2 gamma0 Lambda + Omega^2 and
    S_m = sum_p (-p)^m / (p' - p) [H(Lambda/2piT) - H(p/2piT)] / (Lambda^2 - p^2).
    Summing over both rates covers the overdamped case, where they are real.
    """
    w = np.sqrt(complex(Omega ** 2 - gamma0 ** 2))
    rates = (gamma0 + 1j * w, gamma0 - 1j * w)
    if abs(rates[0] - rates[1]) < 1e-7 * Omega:
        raise DegenerateBoundaryError("critical damping: the local rates coincide")
    P = Lambda ** 2 + 2 * gamma0 * Lambda + Omega ** 2
    S1 = S2 = 0j
    for p, other in (rates, rates[::-1]):
        common = _harmonic_gap(Lambda, p, T) / ((other - p) * (Lambda ** 2 - p * p))
        S1 += -p * common
        S2 += p * p * common
    scale = (2 / np.pi) * gamma0 * Lambda ** 2
    d_xp = -2 * gamma0 * T * Lambda / P + scale * S1.real
    d_pp = 2 * gamma0 * T * Lambda ** 2 / P - scale * S2.real
    return LargeCutoffDiffusion(float(d_xp), float(d_pp))


def diffusion_time_ohmic_largecutoff(M, Omega, gamma0, Lambda, T, t, method="exact", k_i=1.0):
    """D_xp(t), D_pp(t) with the local propagator G_R; both vanish at t = 0.

        D_xp = D_xp(inf) - M gamma0 [G_R' + G_R (2 gamma0 - d/dt)] DF
        D_pp = D_pp(inf) - M gamma0 [G_R' d/dt + Omega^2 G_R] DF
    """
    if Lambda < 50 * max(Omega, gamma0):
        msg = f"Lambda={Lambda:.6g} is not large against max(Omega, gamma0)={max(Omega, gamma0):.6g}"
        logger.warning(msg)
        warnings.warn(msg, ApplicabilityWarning)
    t = float(t)
    if t == 0:
        return LargeCutoffDiffusion(0.0, 0.0)
    late = late_diffusion_ohmic_largecutoff(M, Omega, gamma0, Lambda, T)
    df = decay_function(M, Omega, gamma0, Lambda, T, t, method, k_i)
    ddf = decay_function(M, Omega, gamma0, Lambda, T, t, method, k_i, derivative=True)
    g, g1 = local_green(M, Omega, gamma0, t, 0), local_green(M, Omega, gamma0, t, 1)
    d_xp = late.D_xp - M * gamma0 * (g1 * df + g * (2 * gamma0 * df - ddf))
    d_pp = late.D_pp - M * gamma0 * (g1 * ddf + Omega ** 2 * g * df)
    return LargeCutoffDiffusion(float(np.real(d_xp)), float(np.real(d_pp)))
