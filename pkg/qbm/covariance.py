"""Environment-induced (thermal) covariance of the phase-space coordinates.

With Psi(u) = (G(u), M G'(u)) the p-column of Phi(u) and

    E_a(w, t) = int_0^t Psi_a(u) e^{i w (t-u)} du,

the thermal covariance is a single frequency integral,

    sigma_ab(t) = int_0^inf I(w) coth(w/2T) Re[E_a conj(E_b)] dw.

E is known in closed form for every mode of the propagator. Above w = 1/t it
is split as E = X - e^{i w t} Y with X, Y smooth in w, so the oscillatory
pieces can go to QAWO/QAWF instead of brute-force quadrature.
"""
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import expm

from qbm import specfun
from qbm.errors import BoundViolationError, ConfigError, NoStationaryLimitError
from qbm.propagator import (as_propagator, characteristic_rates, green_laplace, late_pseudo_hamiltonian,
                            late_rates, star_parameters)
from qbm.quadrature import fourier_half_line, half_line
from qbm.spectrum import SpectralModel, noise_weight, scales, spectral_density, _temperature
from qbm.utils import logger, map_grid


@dataclass(frozen=True)
class Covariance2:
    sxx: float
    sxp: float
    spp: float

    @property
    def matrix(self):
        return np.array([[self.sxx, self.sxp], [self.sxp, self.spp]])

    @property
    def det(self):
        return self.sxx * self.spp - self.sxp * self.sxp

    @property
    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.matrix)[0])

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(0.5 * (m[0, 1] + m[1, 0])), float(m[1, 1]))

    @classmethod
    def zero(cls):
        return cls(0.0, 0.0, 0.0)


class TwoTimeCovariance(NamedTuple):
    t1: float
    t2: float
    thermal: np.ndarray
    two_point: Optional[np.ndarray] = None


@dataclass(frozen=True)
class CovarianceSeries:
    t: np.ndarray
    sxx: np.ndarray
    sxp: np.ndarray
    spp: np.ndarray

    @property
    def det(self):
        return self.sxx * self.spp - self.sxp ** 2

    def __getitem__(self, i):
        return Covariance2(float(self.sxx[i]), float(self.sxp[i]), float(self.spp[i]))


@dataclass(frozen=True)
class BoundsReport:
    t: np.ndarray
    position_rate: np.ndarray
    position_bound: np.ndarray
    momentum_rate: np.ndarray
    momentum_bound: np.ndarray

    @property
    def ok(self):
        return bool(np.all(self.position_rate <= self.position_bound)
                    and np.all(self.momentum_rate <= self.momentum_bound))


def _erf_over(z):
    # erf(z)/z, finite at z = 0
    if abs(z) < 1e-4:
        return 2 / np.sqrt(np.pi) * (1 - z * z / 3)
    return specfun.erf(np.complex128(z)) / z


class Response:
    """E_n(w, t) for the channels Psi_n = d^n G / dt^n, n in ``orders``."""

    def __init__(self, model, t, orders=(0, 1)):
        prop = as_propagator(model)
        if prop.modes is None:
            raise ConfigError("the time-dependent covariance needs a closed-form propagator "
                              "(built-in spectral family)")
        self.t = float(t)
        self.orders = tuple(orders)
        self.psi = np.array([prop.green(self.t, n) for n in self.orders])
        modes = prop.modes
        self._f = np.array([f for _, f in modes.exp_modes], dtype=complex)
        self._c = np.array([[a * f ** n for a, f in modes.exp_modes] for n in self.orders], dtype=complex)
        self._r = np.array([r for _, r in modes.erfc_modes], dtype=complex)
        self._k = np.array([[a * r ** (2 * n + 1) for a, r in modes.erfc_modes] for n in self.orders],
                           dtype=complex)
        if len(self._r):
            self._phi_t = specfun.erfcx(-self._r * np.sqrt(self.t + 0j))
        if len(self._f):
            self._exp_ft = np.exp(self._f * self.t)

    def E(self, w):
        t, out = self.t, np.zeros(len(self.orders), dtype=complex)
        eiwt = np.exp(1j * w * t)
        if len(self._f):
            z = (self._f - 1j * w) * t
            # (e^z - 1)/z without cancellation
            small = np.abs(z) < 1e-2
            phi1 = np.where(small, 1 + z / 2 + z * z / 6 + z ** 3 / 24, np.expm1(z) / np.where(small, 1, z))
            out += self._c @ (eiwt * t * phi1)
        if len(self._r):
            q = self._r ** 2 - 1j * w
            K = np.sqrt(t) * _erf_over(np.sqrt(1j * w * t))
            out += self._k @ ((self._phi_t - eiwt * (1 + self._r * K)) / q)
        return out

    def X(self, w):
        out = np.zeros(len(self.orders), dtype=complex)
        if len(self._f):
            out += self._c @ (self._exp_ft / (self._f - 1j * w))
        if len(self._r):
            sw = np.sqrt(1j * w)
            tail = specfun.erfcx(np.complex128(np.sqrt(1j * w * self.t))) / sw
            out += self._k @ ((self._phi_t + self._r * tail) / (self._r ** 2 - 1j * w))
        return out

    def Y(self, w):
        out = np.zeros(len(self.orders), dtype=complex)
        if len(self._f):
            out += self._c @ (1 / (self._f - 1j * w))
        if len(self._r):
            out += self._k @ ((1 + self._r / np.sqrt(1j * w)) / (self._r ** 2 - 1j * w))
        return out


def _split_integral(direct, smooth, terms, w_cut, marks, upper=None):
    """int_0^inf of direct(w) on [0, w_cut] plus, above w_cut, smooth(w) + sum Re[e^{i w s} C(w)]."""
    total = 0.0
    if w_cut > 0:
        total += half_line(direct, marks, upper=w_cut if upper is None else min(w_cut, upper))
    if upper is not None and w_cut >= upper:
        return total
    if smooth is not None:
        total += half_line(smooth, marks, lower=w_cut, upper=upper)
    for s, C in terms:
        total += fourier_half_line(lambda w: C(w).real, s, "cos", marks, lower=w_cut, upper=upper)
        total -= fourier_half_line(lambda w: C(w).imag, s, "sin", marks, lower=w_cut, upper=upper)
    return total


def _resonances(model):
    prop = as_propagator(model)
    rates = [f for _, f in prop.modes.exp_modes] + [r * r for _, r in prop.modes.erfc_modes]
    marks = []
    for f in rates:
        w, g = abs(f.imag), abs(f.real)
        if w > 0:
            marks += [w, max(w - 3 * g, 0.5 * w), w + 3 * g]
        marks.append(abs(f))
    return marks


def _marks(model, T):
    base = scales(model, T) if isinstance(model, SpectralModel) else []
    return sorted(set(base + _resonances(model)))


def _quadratic(weight, ra, a, rb, b, marks, upper=None):
    """int weight(w) Re[E_a(t1) conj(E_b(t2))] dw for responses ra (time t1) and rb (time t2)."""
    t1, t2 = ra.t, rb.t
    if t1 == 0 or t2 == 0:
        return 0.0
    direct = lambda w: weight(w) * (ra.E(w)[a] * np.conj(rb.E(w)[b])).real
    smooth = lambda w: weight(w) * (ra.X(w)[a] * np.conj(rb.X(w)[b])).real
    terms = [(-t2, lambda w: -weight(w) * ra.X(w)[a] * np.conj(rb.Y(w)[b])),
             (t1, lambda w: -weight(w) * ra.Y(w)[a] * np.conj(rb.X(w)[b])),
             (t1 - t2, lambda w: weight(w) * ra.Y(w)[a] * np.conj(rb.Y(w)[b]))]
    return _split_integral(direct, smooth, terms, 1 / max(t1, t2), marks, upper)


def _linear(weight, resp, a, marks, part="re", shift=0.0, upper=None):
    """int weight(w) Re[c e^{-i w shift} E_a] dw with c = 1 (part "re") or -i (part "im")."""
    if resp.t == 0:
        return 0.0
    c = 1.0 if part == "re" else -1j
    t = resp.t
    direct = lambda w: weight(w) * (c * np.exp(-1j * w * shift) * resp.E(w)[a]).real
    terms = [(-shift, lambda w: c * weight(w) * resp.X(w)[a]),
             (t - shift, lambda w: -c * weight(w) * resp.Y(w)[a])]
    return _split_integral(direct, None, terms, 1 / t, marks, upper)


def _weight(model, T):
    return lambda w: noise_weight(model, w, T)


def _thermal(model, T, t, rate=False):
    """(sigma_T, sigma_T') at time t as 2x2 arrays."""
    T = _temperature(model, T)
    t = float(t)
    if t == 0:
        return np.zeros((2, 2)), np.zeros((2, 2))
    M = model.M
    resp = Response(model, t)
    w, marks = _weight(model, T), _marks(model, T)
    sxx = _quadratic(w, resp, 0, resp, 0, marks)
    spp = M * M * _quadratic(w, resp, 1, resp, 1, marks)
    jx = _linear(w, resp, 0, marks)
    g, gdot = resp.psi
    sigma = np.array([[sxx, M * g * jx], [M * g * jx, spp]])
    if not rate:
        return sigma, None
    jp = M * _linear(w, resp, 1, marks)
    psi = np.array([g, M * gdot])
    j = np.array([jx, jp])
    return sigma, np.outer(psi, j) + np.outer(j, psi)


def thermal_covariance(model: SpectralModel, T=None, t=0.0) -> Covariance2:
    return Covariance2.from_matrix(_thermal(model, T, t)[0])


def thermal_covariance_rate(model: SpectralModel, T=None, t=0.0) -> Covariance2:
    """d sigma_T / dt with the propagator convolved against nu before the frequency integral."""
    return Covariance2.from_matrix(_thermal(model, T, t, rate=True)[1])


def thermal_state(model, T, t):
    """(sigma_T, sigma_T') pair as arrays, shared by the master-equation coefficients."""
    return _thermal(model, T, t, rate=True)


def thermal_covariance_series(model: SpectralModel, T=None, grid=(), threads=None) -> CovarianceSeries:
    grid = np.asarray(grid, dtype=float)
    rows = map_grid(lambda t: _thermal(model, T, t)[0], grid, threads=threads, desc="sigma_T")
    rows = np.array(rows)
    return CovarianceSeries(grid, rows[:, 0, 0], rows[:, 0, 1], rows[:, 1, 1])


def noise_convolution(model: SpectralModel, T=None, t=0.0, order=0):
    """(G^(n) . nu . G^(n))(t) = int int G^(n)(t-s) nu(s-s') G^(n)(t-s') ds ds'."""
    if order not in (0, 1, 2):
        raise ValueError(f"noise_convolution order must be 0, 1 or 2, got {order!r}")
    T = _temperature(model, T)
    resp = Response(model, t, orders=(order,))
    return _quadratic(_weight(model, T), resp, 0, resp, 0, _marks(model, T))


def _boundary_momentum(model, T, t, resp=None):
    # M int_0^t G'(u) nu(u) du = Cov(p_T(t), xi(t))
    T = _temperature(model, T)
    resp = resp or Response(model, t)
    return model.M * _linear(_weight(model, T), resp, 1, _marks(model, T), shift=t)


def momentum_covariance_transient(model: SpectralModel, T=None, t=0.0, cutoff=None):
    """sigma_pp from the position response: M^2 [nu(0) G^2 + int w^2 w|E_x|^2 - 2 G int w Im E_x].

    The boundary term needs a finite nu(0); built-in families are evaluated
    with every frequency integral cut at ``cutoff`` (default 1e4 times the
    largest scale), where the three pieces combine into a convergent tail.
    """
    T = _temperature(model, T)
    t = float(t)
    if t == 0:
        return 0.0
    M = model.M
    marks = _marks(model, T)
    upper = cutoff or 1e4 * max(marks)
    resp = Response(model, t, orders=(0,))
    base = _weight(model, T)
    nu0 = half_line(base, marks, upper=upper)
    w2 = lambda w: w * w * base(w)
    w1 = lambda w: w * base(w)
    quad = _quadratic(w2, resp, 0, resp, 0, marks, upper=upper)
    cross = _linear(w1, resp, 0, marks, part="im", upper=upper)
    g = resp.psi[0]
    return M * M * (nu0 * g * g + quad - 2 * g * cross)


def _late_integrand_scales(model, T, rates):
    marks = scales(model, T)
    if rates is not None:
        gamma, omega2 = rates
        w = np.sqrt(max(omega2 - gamma * gamma, 0.0))
        if w > 0:
            marks += [w, max(w - 3 * gamma, 0.5 * w), w + 3 * gamma]
    return marks


def late_covariance(model: SpectralModel, T=None, local_rates=None, coth="exact") -> Covariance2:
    """sigma_inf = int I(w) coth(w/2T) |G_hat(i w)|^2 diag(1, M^2 w^2) dw; sigma_xp vanishes."""
    T = _temperature(model, T)
    M = model.M
    if coth not in ("exact", "matsubara"):
        raise ValueError(f"coth must be 'exact' or 'matsubara', got {coth!r}")
    if model.is_rational and local_rates is None:
        rates = characteristic_rates(model)
        if np.any(rates.real >= 0):
            raise NoStationaryLimitError("a characteristic rate has Re f >= 0")
    if local_rates is not None:
        gamma, omega2 = local_rates
        g_hat = lambda w: 1 / (M * (omega2 - w * w + 2j * gamma * w))
        marks = _late_integrand_scales(model, T, local_rates)
    else:
        g_hat = lambda w: green_laplace(model, 1j * w)
        marks = _late_integrand_scales(model, T, late_rates(model) if model.is_rational else None)

    if coth == "exact":
        weight = lambda w: noise_weight(model, w, T)
    else:
        weight = lambda w: spectral_density(model, w) * specfun.coth_partial(w, T) if w > 0 else \
            noise_weight(model, 0.0, T)

    fxx = lambda w: weight(w) * abs(g_hat(w)) ** 2 if w > 0 else 0.0
    fpp = lambda w: M * M * w * w * weight(w) * abs(g_hat(w)) ** 2 if w > 0 else 0.0
    upper = model.family.omega_max if model.kind == "custom" else None
    if model.kind == "sub_ohmic":
        # w = v^2 makes the integrand regular at the origin
        vx = lambda v: 2 * v * fxx(v * v)
        vp = lambda v: 2 * v * fpp(v * v)
        vmarks = [np.sqrt(m) for m in marks]
        sxx, spp = half_line(vx, vmarks), half_line(vp, vmarks)
    else:
        sxx, spp = half_line(fxx, marks, upper=upper), half_line(fpp, marks, upper=upper)
    logger.info("late covariance (%s, T=%g): sxx=%.6g spp=%.6g", model.kind, T, sxx, spp)
    return Covariance2(sxx, 0.0, spp)


def _residue_sum(c, a, T, shift=None):
    """sum_j c_j int_0^inf w coth(w/2T) / (w^2 + a_j^2) dw, given sum_j c_j = 0."""
    if T == 0:
        terms = -c * np.log(a)
    else:
        terms = c * (np.pi * T / a - specfun.harmonic_number(a / (2 * np.pi * T)))
    if shift is not None:
        index, amount = shift
        terms[index] += c[index] * amount
    return np.sum(terms)


def _rational_closed(M, a, K, k, T, shift=None):
    a = np.asarray(a, dtype=complex)
    a2 = a * a
    c = np.array([(-a2[j]) ** k / np.prod([a2[l] - a2[j] for l in range(len(a)) if l != j])
                  for j in range(len(a))])
    sxx = (K * _residue_sum(c, a, T, shift)).real
    spp = (M * M * K * _residue_sum(-c * a2, a, T, shift)).real
    return Covariance2(float(sxx), 0.0, float(spp))


def late_covariance_ohmic_closed(M, Omega, gamma0, Lambda, T, subtracted=False, local_rates=False):
    """Residue evaluation of the late covariance for the ohmic rational family.

    ``subtracted`` removes log(Lambda/Omega) from the cut-off root by hand,
    which is known to break the uncertainty relation at strong coupling.
    ``local_rates`` pairs the exact noise with the local propagator
    G_R (rates gamma0 +- i Omega_tilde) instead of the exact one.
    """
    K = (2 / np.pi) * gamma0 * Lambda ** 2 / M
    if local_rates:
        w = np.sqrt(complex(Omega ** 2 - gamma0 ** 2))
        a = [Lambda, gamma0 + 1j * w, gamma0 - 1j * w]
    else:
        star = star_parameters(M, Omega, gamma0, Lambda)
        w = star.Omega_tilde_star
        a = [star.Lambda_star, star.gamma_star + 1j * w, star.gamma_star - 1j * w]
    shift = (0, np.log(Lambda / Omega)) if subtracted else None
    return _rational_closed(M, a, K, 0, T, shift)


def late_covariance_supra_closed(model: SpectralModel, T=None):
    """Residue evaluation of the late covariance for the supra-ohmic rational family."""
    if model.kind != "supra_ohmic":
        raise ConfigError(f"expected a supra_ohmic model, got {model.kind!r}")
    T = _temperature(model, T)
    fam = model.family
    a = -characteristic_rates(model)
    return _rational_closed(model.M, a, (2 / np.pi) * fam.gamma2 * fam.Lambda ** 2 / model.M, 1, T)


def two_time_covariance(model: SpectralModel, T=None, t1=0.0, t2=0.0, sigma0=None) -> TwoTimeCovariance:
    """sigma_T(t1, t2) = int int Psi(t1-s) nu(s-s') Psi(t2-s')^T ds ds'."""
    T = _temperature(model, T)
    M = model.M
    r1, r2 = Response(model, t1), Response(model, t2)
    w, marks = _weight(model, T), _marks(model, T)
    scale = np.array([1.0, M])
    block = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            block[a, b] = scale[a] * scale[b] * _quadratic(w, r1, a, r2, b, marks)
    full = None
    if sigma0 is not None:
        prop = as_propagator(model)
        full = prop.phase(t1) @ np.asarray(sigma0) @ prop.phase(t2).T + block
    return TwoTimeCovariance(float(t1), float(t2), block, full)


def late_time_covariance_evolution(model: SpectralModel, sigma_ti: Covariance2, t_i, t, T=None):
    """sigma(t) = sigma_inf + Phi_R(t - t_i) [sigma(t_i) - sigma_inf] Phi_R^T, Phi_R = exp(-(t - t_i) H_inf)."""
    if t < t_i:
        raise ValueError(f"need t >= t_i, got t={t!r}, t_i={t_i!r}")
    H = late_pseudo_hamiltonian(model)
    sigma_inf = late_covariance(model, T).matrix
    phi = expm(-(t - t_i) * H)
    return Covariance2.from_matrix(sigma_inf + phi @ (sigma_ti.matrix - sigma_inf) @ phi.T)


def growth_bounds_check(model: SpectralModel, T=None, grid=(), rates=None, rtol=1e-6) -> BoundsReport:
    """Cauchy-Schwarz bounds on the growth of sigma_T.

        |sigma_xx'| <= (2/M) sqrt(sigma_xx sigma_pp)
        |sigma_pp' - 2 B(t)| <= 2 M sqrt(sigma_pp (G''.nu.G''))

    with B(t) = M int_0^t G'(u) nu(u) du the contribution of the noise at the
    current instant. ``rates`` replaces the computed (sigma_xx', sigma_pp')
    pairs, e.g. to test detection.
    """
    T = _temperature(model, T)
    grid = np.asarray(grid, dtype=float)
    M = model.M
    rows = []
    for i, t in enumerate(grid):
        if t == 0:
            rows.append((0.0, 0.0, 0.0, 0.0))
            continue
        sigma, dsigma = _thermal(model, T, t, rate=True)
        dxx, dpp = (dsigma[0, 0], dsigma[1, 1]) if rates is None else rates[i]
        boundary = _boundary_momentum(model, T, t)
        ggg = noise_convolution(model, T, t, order=2)
        sxx, spp = max(sigma[0, 0], 0.0), max(sigma[1, 1], 0.0)
        rows.append((abs(dxx), (2 / M) * np.sqrt(sxx * spp),
                     abs(dpp - 2 * boundary), 2 * M * np.sqrt(spp * max(ggg, 0.0))))
    rows = np.array(rows).reshape(-1, 4)
    report = BoundsReport(grid, rows[:, 0], rows[:, 1] * (1 + rtol) + 1e-14,
                          rows[:, 2], rows[:, 3] * (1 + rtol) + 1e-14)
    bad = np.flatnonzero((report.position_rate > report.position_bound)
                         | (report.momentum_rate > report.momentum_bound))
    if len(bad):
        t_bad = float(grid[bad[0]])
        raise BoundViolationError(f"covariance growth bound violated at t={t_bad:.6g}", t=t_bad)
    return report
