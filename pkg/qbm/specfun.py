"""Complex special functions used by the closed-form solutions.

Thin checked wrappers over :mod:`scipy.special` plus the two series that
scipy does not provide (the Lerch-type sum and the Matsubara expansion of
coth). Poles and branch cuts raise instead of returning inf or nan.
"""
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import special

from qbm.config import settings
from qbm.errors import BranchCutError, ConvergenceError, PoleError

EULER_GAMMA = float(np.euler_gamma)


class TruncationBudget(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_terms: int = Field(default=settings.MAX_TERMS, ge=8)
    abs_tol: float = Field(default=settings.ABS_TOL, gt=0, lt=1)
    rel_tol: float = Field(default=settings.REL_TOL, gt=0, lt=1)


DEFAULT_BUDGET = TruncationBudget()


def _is_nonpositive_integer(z):
    z = np.asarray(z, dtype=complex)
    return (z.imag == 0) & (z.real <= 0) & (np.round(z.real) == z.real)


def _checked(value, z, name):
    value = np.asarray(value)
    if not np.all(np.isfinite(value)):
        raise PoleError(f"{name} is not finite at z={z!r}")
    return value if value.ndim else value[()]


def digamma(z):
    """psi(z) for complex z; raises PoleError at 0, -1, -2, ..."""
    if np.any(_is_nonpositive_integer(z)):
        raise PoleError(f"digamma has a pole at z={z!r}")
    return _checked(special.psi(np.asarray(z, dtype=complex)), z, "digamma")


def harmonic_number(z):
    """H(z) = gamma_E + psi(z + 1); H(n) is the n-th harmonic number."""
    z1 = np.asarray(z, dtype=complex) + 1
    if np.any(_is_nonpositive_integer(z1)):
        raise PoleError(f"harmonic number has a pole at z={z!r}")
    return _checked(EULER_GAMMA + special.psi(z1), z, "harmonic_number")


def _check_e1_domain(z):
    z = np.asarray(z, dtype=complex)
    if np.any(z == 0):
        raise PoleError("E1 has a logarithmic pole at z=0")
    if np.any((z.imag == 0) & (z.real < 0)):
        raise BranchCutError(f"E1 evaluated on its branch cut (arg z = pi) at z={z!r}")
    return z


def exp_integral_e1(z):
    """Exponential integral E1(z), principal branch, cut along the negative real axis."""
    zc = _check_e1_domain(z)
    return _checked(special.exp1(zc), z, "E1")


def _e1_scaled_asymptotic(z, n_terms=30):
    # e^z E1(z) ~ (1/z) sum (-1)^k k! / z^k, truncated at the smallest term
    total = np.zeros_like(z)
    term = 1.0 / z
    best = np.abs(term)
    for k in range(n_terms):
        total = total + term
        term = -term * (k + 1) / z
        mag = np.abs(term)
        if np.all(mag > best) or np.all(mag < 1e-17 * np.abs(total)):
            break
        best = np.minimum(best, mag)
    return total


def exp_integral_e1_scaled(z):
    """e^z E1(z), stable for large |z| where E1 alone underflows."""
    zc = np.atleast_1d(_check_e1_domain(z))
    out = np.empty_like(zc)
    big = np.abs(zc) >= 40
    if np.any(big):
        out[big] = _e1_scaled_asymptotic(zc[big])
    if np.any(~big):
        out[~big] = np.exp(zc[~big]) * special.exp1(zc[~big])
    out = _checked(out, z, "scaled E1")
    return out if np.ndim(z) else out[0]


def exp_integral_ei(x):
    """Ei(x) for real x (principal value for x > 0)."""
    x = np.asarray(x, dtype=float)
    if np.any(x == 0):
        raise PoleError("Ei has a logarithmic pole at x=0")
    return _checked(special.expi(x), x, "Ei")


def erf(z):
    return special.erf(np.asarray(z, dtype=complex)) if np.iscomplexobj(z) else special.erf(z)


def erfcx(z):
    """Scaled complementary error function e^{z^2} erfc(z)."""
    return special.erfcx(np.asarray(z, dtype=complex)) if np.iscomplexobj(z) else special.erfcx(z)


def erfc(z, scaled=False):
    """erfc(z); with ``scaled=True`` returns e^{z^2} erfc(z) instead."""
    if scaled:
        return erfcx(z)
    value = special.erfc(np.asarray(z, dtype=complex)) if np.iscomplexobj(z) else special.erfc(z)
    if not np.all(np.isfinite(value)):
        raise OverflowError(f"erfc({z!r}) overflows; request the scaled form")
    return value


def lerch_phi1(z, lam, budget: TruncationBudget = None, chunk=4096):
    """Sum_{k>=1} e^{-lam k} / (k + z) with a geometric tail bound."""
    budget = budget or DEFAULT_BUDGET
    z = complex(z)
    if z.imag == 0 and z.real <= -1 and z.real == round(z.real):
        raise PoleError(f"lerch_phi1 has a pole at z={z!r}")
    if not lam > 0:
        raise ConvergenceError(f"lerch_phi1 needs lambda > 0, got {lam!r}")
    q = np.exp(-lam)
    total = 0j
    k0 = 1
    while k0 <= budget.max_terms:
        k = np.arange(k0, min(k0 + chunk, budget.max_terms + 1), dtype=float)
        total += np.sum(np.exp(-lam * k) / (k + z))
        last = k[-1]
        dist = last + 1 + z.real
        if dist > 0:
            bound = np.exp(-lam * (last + 1)) / ((1 - q) * dist)
            if bound < max(budget.abs_tol, budget.rel_tol * abs(total)):
                return total
        k0 = int(last) + 1
    raise ConvergenceError(
        f"lerch_phi1(z={z!r}, lam={lam!r}) did not reach tolerance in {budget.max_terms} terms")


def coth_partial(omega, T, budget: TruncationBudget = None, n_terms=None):
    """Matsubara expansion of coth(omega / 2T) with an arctan tail estimate.

    The estimate makes the partial result approach coth from below.
    T == 0 is the exact zero-temperature flag and returns 1.
    """
    if not omega > 0:
        raise ValueError(f"coth_partial needs omega > 0, got {omega!r}")
    if T == 0:
        return 1.0
    budget = budget or DEFAULT_BUDGET
    x = omega / (2 * np.pi * T)
    if n_terms is None:
        n_terms = int(np.ceil(max(8.0, 2 * x, (x / (6 * budget.abs_tol)) ** (1 / 3))))
        if n_terms > budget.max_terms:
            raise ConvergenceError(
                f"coth_partial at omega/2piT={x:.3g} needs {n_terms} terms (budget {budget.max_terms})")
    k = np.arange(1, n_terms + 1, dtype=float)
    partial = np.sum(x / (x * x + k * k))
    k1 = n_terms + 1
    tail = np.arctan(x / k1) + 0.5 * x / (x * x + k1 * k1)
    return float(1 / (np.pi * x) + (2 / np.pi) * (partial + tail))


def exp_integral_ei_scaled(x):
    """e^{-x} Ei(x) for real x > 0, asymptotic beyond x = 40 where Ei overflows."""
    x = float(x)
    if x <= 0:
        raise ValueError(f"exp_integral_ei_scaled needs x > 0, got {x!r}")
    if x < 40:
        return float(np.exp(-x) * special.expi(x))
    total, term = 0.0, 1.0 / x
    for k in range(40):
        total += term
        term = term * (k + 1) / x
        if abs(term) < 1e-17 * total:
            break
    return total
