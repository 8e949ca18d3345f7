"""Adaptive quadrature helpers on top of QUADPACK (scipy.integrate.quad).

Every integral in the package goes through :func:`integrate`, which turns
QUADPACK warnings into :class:`QuadratureError` and lets :func:`escalate`
retry with a larger subinterval limit. Fourier-type integrals over the
half line are split into panels at the physical scales of the integrand;
finite panels use the QAWO weight and the tail uses QAWF.
"""
import numpy as np
from scipy import integrate as spi

from qbm.config import settings
from qbm.errors import QuadratureError
from qbm.utils import escalate, logger

# QUADPACK's own error estimate is usually pessimistic by orders of magnitude
ACCEPT_FACTOR = 1000.0


def _accept(out, epsabs, epsrel, where):
    value, abserr = out[0], out[1]
    if len(out) > 3:
        tol = max(epsabs, epsrel * abs(value))
        if not np.isfinite(value) or abserr > ACCEPT_FACTOR * tol:
            raise QuadratureError(f"{where}: {out[3].splitlines()[0]} (value={value:.6g}, abserr={abserr:.3g})")
        if abserr > tol:
            logger.warning("%s: accepted abserr=%.3g above tolerance %.3g (%s)",
                           where, abserr, tol, out[3].splitlines()[0])
        else:
            logger.debug("%s accepted with abserr=%.3g", where, abserr)
    if not np.isfinite(value):
        raise QuadratureError(f"{where}: non-finite result")
    return value


@escalate(QuadratureError)
def integrate(f, a, b, epsabs=None, epsrel=None, points=None, weight=None, wvar=None, limit=None):
    """Real integral of ``f`` over [a, b] (b may be inf), raising on failure."""
    epsabs = settings.QUAD_EPSABS if epsabs is None else epsabs
    epsrel = settings.QUAD_EPSREL if epsrel is None else epsrel
    kwargs = dict(epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1)
    if weight is not None:
        kwargs.update(weight=weight, wvar=wvar)
        if np.isinf(b):
            kwargs.update(limlst=max(50, limit // 8))
    elif points is not None and np.isfinite(b):
        inner = [p for p in points if a < p < b]
        if inner:
            kwargs.update(points=inner)
    out = spi.quad(f, a, b, **kwargs)
    where = f"quad[{a:.6g}, {b:.6g}]" + (f" weight={weight}({wvar:.6g})" if weight else "")
    return _accept(out, epsabs, epsrel, where)


def integrate_complex(f, a, b, **kwargs):
    re = integrate(lambda x: np.real(f(x)), a, b, **kwargs)
    im = integrate(lambda x: np.imag(f(x)), a, b, **kwargs)
    return complex(re, im)


def panel_edges(scales, lower=0.0, upper=None):
    """Sorted distinct break points strictly inside (lower, upper)."""
    edges = sorted({float(s) for s in scales if s is not None and np.isfinite(s) and s > lower})
    if upper is not None:
        edges = [e for e in edges if e < upper]
    return [float(lower)] + edges


def half_line(f, scales, epsabs=None, epsrel=None, lower=0.0, upper=None):
    """Integral of a non-oscillatory ``f`` over [lower, upper or inf) split at ``scales``."""
    edges = panel_edges(scales, lower, upper)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate(f, a, b, epsabs=epsabs, epsrel=epsrel)
    end = np.inf if upper is None else upper
    total += integrate(f, edges[-1], end, epsabs=epsabs, epsrel=epsrel)
    return total


def fourier_half_line(f, t, kind="cos", scales=(), epsabs=None, epsrel=None, lower=0.0, upper=None):
    """Integral of f(w) cos(w t) (or sin) over [lower, upper or inf).

    The panels below the largest scale use the QAWO weight; beyond it the
    tail goes to QAWF, which requires ``f`` to decay monotonically there.
    """
    t = float(t)
    if kind == "sin" and t < 0:
        return -fourier_half_line(f, -t, kind, scales, epsabs, epsrel, lower, upper)
    t = abs(t)
    if t == 0:
        if kind == "sin":
            return 0.0
        return half_line(f, scales, epsabs=epsabs, epsrel=epsrel, lower=lower, upper=upper)
    edges = panel_edges(list(scales) + [2 * np.pi / t], lower, upper)
    # beyond the last physical scale the integrand only decays
    edges.append(4 * max(edges[-1], 2 * np.pi / t) if upper is None else upper)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            total += integrate(f, a, b, epsabs=epsabs, epsrel=epsrel, weight=kind, wvar=t)
    if upper is None:
        total += integrate(f, edges[-1], np.inf, epsabs=epsabs, epsrel=epsrel, weight=kind, wvar=t)
    return total
