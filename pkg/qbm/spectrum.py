"""Environment spectral densities and the kernels they induce.

A :class:`SpectralModel` couples the system parameters (M, Omega, T) with one
of four families. Everything else in the package only ever talks to the
environment through the functions below: I(w), the Laplace-domain damping
kernel, the time-domain damping kernel and its antiderivatives, and the
noise kernel nu(t).

Conventions (hbar = k_B = 1):

    gamma(t) = (1/M) int_0^inf I(w)/w cos(w t) dw
    nu(t)    = int_0^inf I(w) coth(w/2T) cos(w t) dw
"""
from functools import lru_cache
from typing import Annotated, Callable, Literal, NamedTuple, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.interpolate import PchipInterpolator

from qbm.errors import (ConfigError, DivergenceError, InterpolationError,
                        NonPositiveSpectrumError, PoleError)
from qbm.quadrature import fourier_half_line, integrate, integrate_complex
from qbm.utils import logger

_FROZEN = ConfigDict(frozen=True, extra="forbid")


class SystemParams(BaseModel):
    model_config = _FROZEN

    M: float = Field(gt=0)
    Omega: float = Field(gt=0)
    T: float = Field(default=0.0, ge=0)


class OhmicRational(BaseModel):
    """I(w) = (2/pi) M gamma0 w Lambda^2 / (Lambda^2 + w^2)."""
    model_config = _FROZEN

    kind: Literal["ohmic"] = "ohmic"
    gamma0: float = Field(ge=0)
    Lambda: float = Field(gt=0)


class SubOhmicSqrt(BaseModel):
    """I(w) = (2/pi) M gamma* sqrt(w* w), w*^2 = Omega^2 + gamma*^2."""
    model_config = _FROZEN

    kind: Literal["sub_ohmic"] = "sub_ohmic"
    gamma_star: float = Field(gt=0)


class SupraOhmicRational(BaseModel):
    """I(w) = (2/pi) M gamma2 w^3 Lambda^2 / (Lambda^2 + w^2)^2."""
    model_config = _FROZEN

    kind: Literal["supra_ohmic"] = "supra_ohmic"
    gamma2: float = Field(gt=0)
    Lambda: float = Field(gt=0)


class CustomTabulated(BaseModel):
    """Sampled I(w); monotone cubic in log w between samples, linear to the origin below."""
    model_config = _FROZEN

    kind: Literal["custom"] = "custom"
    omega: Tuple[float, ...]
    intensity: Tuple[float, ...]
    odd: bool = True

    @field_validator("intensity")
    @classmethod
    def _non_negative(cls, v):
        if any(not np.isfinite(x) or x < 0 for x in v):
            raise ValueError("intensity samples must be finite and >= 0")
        return v

    @model_validator(mode="after")
    def _grid(self):
        w = np.asarray(self.omega)
        if len(w) != len(self.intensity):
            raise ValueError("omega and intensity must have the same length")
        if len(w) < 4:
            raise ValueError("a tabulated spectral density needs at least 4 samples")
        if w[0] <= 0 or np.any(np.diff(w) <= 0):
            raise ValueError("omega samples must be positive and strictly increasing")
        return self

    @property
    def omega_max(self):
        return self.omega[-1]


SpectralFamily = Annotated[Union[OhmicRational, SubOhmicSqrt, SupraOhmicRational, CustomTabulated],
                           Field(discriminator="kind")]


class SpectralModel(BaseModel):
    model_config = _FROZEN

    system: SystemParams
    family: SpectralFamily

    @property
    def M(self):
        return self.system.M

    @property
    def Omega(self):
        return self.system.Omega

    @property
    def T(self):
        return self.system.T

    @property
    def kind(self):
        return self.family.kind

    @property
    def is_rational(self):
        return self.kind in ("ohmic", "supra_ohmic")

    @property
    def omega_star(self):
        return float(np.hypot(self.Omega, self.family.gamma_star))

    @classmethod
    def ohmic(cls, M, Omega, gamma0, Lambda, T=0.0):
        return cls(system=SystemParams(M=M, Omega=Omega, T=T),
                   family=OhmicRational(gamma0=gamma0, Lambda=Lambda))

    @classmethod
    def sub_ohmic(cls, M, Omega, gamma_star, T=0.0):
        return cls(system=SystemParams(M=M, Omega=Omega, T=T), family=SubOhmicSqrt(gamma_star=gamma_star))

    @classmethod
    def supra_ohmic(cls, M, Omega, gamma2, Lambda, T=0.0):
        return cls(system=SystemParams(M=M, Omega=Omega, T=T),
                   family=SupraOhmicRational(gamma2=gamma2, Lambda=Lambda))

    @classmethod
    def custom(cls, M, Omega, omega, intensity, T=0.0, odd=True):
        return cls(system=SystemParams(M=M, Omega=Omega, T=T),
                   family=CustomTabulated(omega=tuple(map(float, omega)),
                                          intensity=tuple(map(float, intensity)), odd=odd))

    def with_temperature(self, T):
        return SpectralModel(system=self.system.model_copy(update={"T": float(T)}), family=self.family)

    def with_family(self, family):
        return SpectralModel(system=self.system, family=family)


class KernelSample(NamedTuple):
    t: float
    value: float


class DampingCheck(NamedTuple):
    accepted: bool
    kernel: Callable
    spectral_density: Callable
    max_deviation: float


def _temperature(model, T):
    T = model.T if T is None else float(T)
    if T < 0:
        raise ConfigError(f"temperature must be >= 0, got T={T!r}")
    return T


def scales(model, T=None):
    """Frequencies at which the spectral integrands change character."""
    T = _temperature(model, T)
    out = [model.Omega, 2 * np.pi * T if T > 0 else None]
    if model.kind in ("ohmic", "supra_ohmic"):
        out.append(model.family.Lambda)
    elif model.kind == "sub_ohmic":
        out.append(model.omega_star)
    else:
        out.append(model.family.omega_max)
    return [s for s in out if s]


@lru_cache(maxsize=64)
def _interpolator(family: CustomTabulated):
    logger.info("Building log-frequency interpolant over %d samples", len(family.omega))
    return PchipInterpolator(np.log(family.omega), np.asarray(family.intensity), extrapolate=False)


def _custom_density(family, w):
    w_lo, w_hi = family.omega[0], family.omega_max
    if np.any(w > w_hi * (1 + 1e-12)):
        raise InterpolationError(
            f"omega={np.max(w):.6g} lies above the tabulated range (omega_max={w_hi:.6g})")
    out = np.empty_like(w)
    low = w < w_lo
    out[low] = family.intensity[0] * w[low] / w_lo
    inner = ~low
    if np.any(inner):
        out[inner] = _interpolator(family)(np.log(np.clip(w[inner], w_lo, w_hi)))
    return np.maximum(out, 0.0)


def _density(model, w):
    fam, M = model.family, model.M
    if fam.kind == "ohmic":
        return (2 / np.pi) * M * fam.gamma0 * w * fam.Lambda ** 2 / (fam.Lambda ** 2 + w * w)
    if fam.kind == "supra_ohmic":
        return (2 / np.pi) * M * fam.gamma2 * w ** 3 * fam.Lambda ** 2 / (fam.Lambda ** 2 + w * w) ** 2
    if fam.kind == "sub_ohmic":
        return (2 / np.pi) * M * fam.gamma_star * np.sqrt(model.omega_star * w)
    return _custom_density(fam, w)


def spectral_density(model: SpectralModel, omega, odd=False):
    """I(omega); negative frequencies need ``odd=True`` (or a custom table flagged odd)."""
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    negative = w < 0
    if np.any(negative) and not (odd or (model.kind == "custom" and model.family.odd)):
        raise ValueError(f"spectral_density needs omega >= 0, got omega={np.min(w)!r} (pass odd=True)")
    value = np.sign(w) * _density(model, np.abs(w))
    value[w == 0] = 0.0
    return value if np.ndim(omega) else float(value[0])


def _coth_half(w, T):
    if T == 0:
        return np.ones_like(w)
    x = w / (2 * T)
    with np.errstate(divide="ignore", over="ignore"):
        return np.where(x > 20, 1.0, 1 / np.tanh(x))


def noise_weight(model, omega, T=None):
    """I(omega) coth(omega/2T), with its finite limit at omega = 0."""
    T = _temperature(model, T)
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = _density(model, w[pos]) * _coth_half(w[pos], T)
    if T > 0 and np.any(~pos):
        out[~pos] = 2 * T * _density_slope(model)
    return out if np.ndim(omega) else float(out[0])


def _custom_laplace(model, s):
    fam, M = model.family, model.M
    w_max = fam.omega_max
    f = lambda w: _custom_density(fam, np.array([w]))[0] / w if w > 0 else fam.intensity[0] / fam.omega[0]
    if s == 0:
        return complex((np.pi / (2 * M)) * fam.intensity[0] / fam.omega[0])
    if abs(s.real) > 1e-12 * abs(s):
        g = lambda w: f(w) * s / (s * s + w * w)
        return integrate_complex(g, 0.0, w_max, points=list(fam.omega[1:-1])) / M
    # on the imaginary axis: s = +-i w0, (pi/2) delta plus principal value
    w0 = abs(s.imag)
    if w0 < w_max:
        re = (np.pi / 2) * f(w0)
        pv = integrate(f, 0.0, w_max, weight="cauchy", wvar=w0)
    else:
        re = 0.0
        pv = integrate(lambda w: f(w) / (w - w0), 0.0, w_max)
    minus = integrate(lambda w: f(w) / (w + w0), 0.0, w_max)
    value = complex(re, 0.5 * (pv - minus)) / M
    return value if s.imag > 0 else value.conjugate()


def damping_laplace(model: SpectralModel, s):
    """Laplace transform of the damping kernel, gamma_hat(s)."""
    s = complex(s)
    fam = model.family
    if fam.kind == "ohmic":
        if s == -fam.Lambda:
            raise PoleError(f"damping kernel has a pole at s={s!r}")
        return fam.gamma0 * fam.Lambda / (s + fam.Lambda)
    if fam.kind == "supra_ohmic":
        if s == -fam.Lambda:
            raise PoleError(f"damping kernel has a pole at s={s!r}")
        return 0.5 * fam.gamma2 * fam.Lambda * s / (s + fam.Lambda) ** 2
    if fam.kind == "sub_ohmic":
        if s == 0:
            raise PoleError("sub-ohmic damping kernel is singular at s=0")
        return fam.gamma_star * np.sqrt(2 * model.omega_star) / np.sqrt(s)
    return _custom_laplace(model, s)


def damping_time(model: SpectralModel, t, method="auto"):
    """gamma(t), even in t; ``method="quad"`` forces the frequency integral."""
    t = abs(float(t))
    fam = model.family
    if method == "auto" and fam.kind != "custom":
        if fam.kind == "ohmic":
            return fam.gamma0 * fam.Lambda * np.exp(-fam.Lambda * t)
        if fam.kind == "supra_ohmic":
            L = fam.Lambda
            return 0.5 * fam.gamma2 * L * (1 - L * t) * np.exp(-L * t)
        if t == 0:
            raise DivergenceError("sub-ohmic damping kernel diverges as t^(-1/2) at t=0")
        return _sub_ohmic_prefactor(model) / np.sqrt(t)
    if method not in ("auto", "quad"):
        raise ValueError(f"unknown damping_time method {method!r}")
    if fam.kind == "sub_ohmic" and t == 0:
        raise DivergenceError("sub-ohmic damping kernel diverges as t^(-1/2) at t=0")
    f = lambda w: _density(model, np.array([w]))[0] / w if w > 0 else _density_slope(model)
    upper = fam.omega_max if fam.kind == "custom" else None
    return fourier_half_line(f, t, "cos", scales(model), upper=upper) / model.M


def _density_slope(model):
    # lim I(w)/w as w -> 0
    fam = model.family
    if fam.kind == "ohmic":
        return (2 / np.pi) * model.M * fam.gamma0
    if fam.kind == "custom":
        return fam.intensity[0] / fam.omega[0]
    return 0.0 if fam.kind == "supra_ohmic" else np.inf


def _sub_ohmic_prefactor(model):
    return model.family.gamma_star * np.sqrt(2 * model.omega_star / np.pi)


def damping_primitive(model: SpectralModel, t, order):
    """Gamma_n(t): the n-th antiderivative of gamma with Gamma_n(0) = 0, n = 1, 2, 3."""
    if order not in (1, 2, 3):
        raise ValueError(f"damping_primitive order must be 1, 2 or 3, got {order!r}")
    u = float(t)
    if u < 0:
        raise ValueError(f"damping_primitive needs t >= 0, got t={t!r}")
    fam = model.family
    if fam.kind == "ohmic":
        g, L = fam.gamma0, fam.Lambda
        e = -np.expm1(-L * u)
        if order == 1:
            return g * e
        if order == 2:
            return g * (u - e / L)
        return g * (0.5 * u * u - u / L + e / L ** 2)
    if fam.kind == "supra_ohmic":
        g, L = fam.gamma2, fam.Lambda
        x = L * u
        if order == 1:
            return 0.5 * g * L * u * np.exp(-x)
        if order == 2:
            return 0.5 * g / L * (1 - (1 + x) * np.exp(-x))
        return 0.5 * g / L * (u - (2 - (2 + x) * np.exp(-x)) / L)
    if fam.kind == "sub_ohmic":
        c = _sub_ohmic_prefactor(model)
        return c * (2 * u ** 0.5, (4 / 3) * u ** 1.5, (8 / 15) * u ** 2.5)[order - 1]
    if u == 0:
        return 0.0
    return _custom_primitive(model, u, order)


def _custom_primitive(model, u, order):
    fam = model.family
    f = lambda w: _custom_density(fam, np.array([w]))[0]

    def kernel(w):
        x = w * u
        if order == 1:
            return np.sin(x) / (w * w) if w > 0 else u * fam.intensity[0] / fam.omega[0]
        if x < 1e-3:
            # small-argument series of (1 - cos x) and (x - sin x)
            return (u ** order / [1, 1, 2, 6][order]) * (1 - x * x / ((order + 1) * (order + 2))) / w
        if order == 2:
            return (1 - np.cos(x)) / w ** 3
        return (x - np.sin(x)) / w ** 4

    g = lambda w: f(w) * kernel(w) if w > 0 else 0.0
    return integrate(g, 0.0, fam.omega_max, points=list(fam.omega[1:-1])) / model.M


def frequency_renormalization(model: SpectralModel):
    """delta Omega^2 = 2 gamma(0), the counterterm separating bare and physical frequency."""
    fam = model.family
    if fam.kind == "sub_ohmic":
        raise DivergenceError("the sub-ohmic frequency counterterm diverges (gamma(t) ~ t^(-1/2) at t=0)")
    if fam.kind == "custom":
        return 2 * damping_time(model, 0.0, method="quad")
    return 2 * damping_time(model, 0.0)


def _check_custom_growth(fam):
    w, i = fam.omega[-2:], fam.intensity[-2:]
    if i[0] > 0 and i[1] > 0:
        slope = np.log(i[1] / i[0]) / np.log(w[1] / w[0])
        if slope >= 1:
            raise DivergenceError(
                f"tabulated I(omega) grows like omega^{slope:.3g} at omega_max={w[1]:.6g}; "
                "the noise kernel needs a high-frequency cut-off")


def noise_kernel(model: SpectralModel, t, T=None):
    """nu(t); diverges at t = 0 for every built-in family (I(w) coth ~ 1/w or faster)."""
    T = _temperature(model, T)
    t = abs(float(t))
    fam = model.family
    if fam.kind == "custom":
        _check_custom_growth(fam)
        return fourier_half_line(lambda w: noise_weight(model, w, T), t, "cos", scales(model, T),
                                 upper=fam.omega_max)
    if t == 0:
        raise DivergenceError(f"{fam.kind} noise kernel diverges at t=0 (unbounded high-frequency tail)")
    if fam.kind == "sub_ohmic":
        return _sub_ohmic_noise(model, t, T)
    return fourier_half_line(lambda w: noise_weight(model, w, T), t, "cos", scales(model, T))


def _sub_ohmic_noise(model, t, T):
    # zero-temperature part: Abel-regularized int sqrt(w) cos(w t) dw
    pref = (2 / np.pi) * model.M * model.family.gamma_star * np.sqrt(model.omega_star)
    value = -pref * np.sqrt(np.pi) / (2 * np.sqrt(2)) * t ** -1.5
    if T == 0:
        return value
    # thermal part with w = u^2, integrand finite at the origin
    def f(u):
        if u == 0:
            return 4 * T * pref
        w = u * u
        return 2 * u * pref * u * (2 / np.expm1(w / T)) * np.cos(w * t)
    u_max = np.sqrt(60 * T)
    return value + integrate(f, 0.0, u_max, points=[np.sqrt(T)])


def kernel_samples(model: SpectralModel, times, kind="noise", T=None):
    if kind == "noise":
        return [KernelSample(float(t), float(noise_kernel(model, t, T))) for t in times]
    if kind == "damping":
        return [KernelSample(float(t), float(damping_time(model, t))) for t in times]
    raise ValueError(f"kernel kind must be 'noise' or 'damping', got {kind!r}")


def _real_on_axis(gamma_hat, w):
    # symmetric limit of gamma_hat(eps +- i w) picks the physical (even) part
    eps = 1e-12 * max(w, 1.0)
    return 0.5 * (complex(gamma_hat(complex(eps, w))) + complex(gamma_hat(complex(eps, -w)))).real


def validate_damping_candidate(gamma_hat, model: SpectralModel, n_points=64, tol=1e-6):
    """Rebuild gamma_hat from the spectral density it induces and compare.

    I(w) = (2/pi) M w Re gamma_hat(i w); the roundtrip kernel is
    (1/M) int I(w)/w * s/(s^2+w^2) dw, evaluated after w = |s| tan(theta).
    """
    M, Omega = model.M, model.Omega
    freqs = np.geomspace(1e-3, 1e3, n_points) * Omega
    re = np.array([_real_on_axis(gamma_hat, w) for w in freqs])
    scale = max(np.max(np.abs(re)), 1e-300)
    if np.any(re < -1e-10 * scale):
        w_bad = freqs[np.argmin(re)]
        raise NonPositiveSpectrumError(f"candidate kernel induces I(omega) < 0 at omega={w_bad:.6g}")

    def density(w):
        w = np.atleast_1d(np.asarray(w, dtype=float))
        out = np.array([(2 / np.pi) * M * x * _real_on_axis(gamma_hat, x) if x > 0 else 0.0 for x in w])
        return out if len(out) > 1 else float(out[0])

    def kernel(s):
        s = complex(s)
        r = abs(s)

        def f(theta):
            w = r * np.tan(theta)
            return _real_on_axis(gamma_hat, w) * r * s / (s * s + w * w) / np.cos(theta) ** 2
        return (2 / np.pi) * integrate_complex(f, 0.0, np.pi / 2)

    s_grid = np.geomspace(1e-2, 1e2, n_points) * Omega
    deviation = 0.0
    for s in s_grid:
        want = complex(gamma_hat(complex(s)))
        got = kernel(s)
        deviation = max(deviation, abs(got - want) / max(abs(want), 1e-12 * scale, 1e-300))
    accepted = deviation < tol
    logger.info("damping candidate %s (max relative deviation %.3g)",
                "accepted" if accepted else "replaced", deviation)
    return DampingCheck(accepted, gamma_hat if accepted else kernel, density, float(deviation))


def load_spectrum_csv(path, odd=True) -> CustomTabulated:
    """Read a two-column ``omega,intensity`` CSV into a tabulated family."""
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as e:
        raise ConfigError(f"cannot read spectral density file {path}: {e}") from e
    if data.dtype.names != ("omega", "intensity"):
        raise ConfigError(f"{path}: expected header 'omega,intensity', got {data.dtype.names}")
    try:
        return CustomTabulated(omega=tuple(np.atleast_1d(data["omega"]).tolist()),
                               intensity=tuple(np.atleast_1d(data["intensity"]).tolist()), odd=odd)
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
