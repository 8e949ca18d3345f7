"""Evolution of reduced states: Gaussian states, cumulants, superpositions, driven means.

Every state evolves by the same rule: the homogeneous flow Phi(t) pushes
the initial Wigner function forward and a Gaussian with covariance
sigma_T(t) smears it. An external force only shifts the mean.
"""
from dataclasses import dataclass
from typing import Callable, Literal, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from qbm.covariance import Covariance2, thermal_covariance
from qbm.errors import ConfigError, GridTooCoarseError, NonPhysicalStateError, OrderUnsupportedError
from qbm.propagator import _checked_inverse, as_propagator, transition_matrix
from qbm.quadrature import integrate
from qbm.spectrum import scales
from qbm.utils import logger, map_grid

MIN_DET = 0.25
DET_TOL = 1e-10
_J = np.array([[0.0, -1.0], [1.0, 0.0]])


class GaussianState(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    mean: Tuple[float, float] = (0.0, 0.0)
    cov: Covariance2

    @model_validator(mode="after")
    def _admissible(self):
        c = self.cov
        if not (c.sxx > 0 and c.spp > 0):
            raise NonPhysicalStateError(f"covariance must be positive definite, got {c}")
        if c.det < MIN_DET - DET_TOL * max(1.0, c.sxx * c.spp):
            raise NonPhysicalStateError(f"det sigma = {c.det:.12g} violates the uncertainty bound 1/4")
        return self

    @classmethod
    def coherent(cls, M, Omega, x=0.0, p=0.0):
        """Ground-state width of the bare oscillator, displaced to (x, p)."""
        return cls(mean=(x, p), cov=Covariance2(1 / (2 * M * Omega), 0.0, M * Omega / 2))

    @classmethod
    def from_arrays(cls, mean, cov):
        mean = np.asarray(mean, dtype=float)
        return cls(mean=(float(mean[0]), float(mean[1])), cov=Covariance2.from_matrix(cov))

    @property
    def mean_vector(self):
        return np.array(self.mean)

    @property
    def purity(self):
        return 1 / (2 * np.sqrt(self.cov.det))


class SuperpositionState(BaseModel):
    """Equal-weight superposition of the base Gaussian displaced by +-delta_x.

    ``delta_x`` is half the separation between the lobes (they sit 2 delta_x
    apart), which puts the ohmic high-temperature decoherence time at
    1/(8 M gamma0 T delta_x^2).

    ``direction`` picks the displacement axis; the interference fringes run
    along the other axis. ``shear`` is the accumulated lower-left entry of
    any initial kick applied since construction.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    base: GaussianState
    delta_x: float = Field(gt=0)
    direction: Literal["position", "momentum"] = "position"
    shear: float = 0.0

    @property
    def offset(self):
        d = np.array([self.delta_x, 0.0]) if self.direction == "position" else np.array([0.0, self.delta_x])
        return np.array([[1.0, 0.0], [self.shear, 1.0]]) @ d

    @property
    def wavevector(self):
        return 2 * _J @ self.offset

    @property
    def normalization(self):
        k = self.wavevector
        return 2 * (1 + np.exp(-0.5 * k @ self.base.cov.matrix @ k))


@dataclass(frozen=True)
class ForceProfile:
    """External force F(t) on the momentum, as a callable or a piecewise-linear table."""
    func: Optional[Callable[[float], float]] = None
    times: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.func is None:
            t, v = np.asarray(self.times, dtype=float), np.asarray(self.values, dtype=float)
            if t.ndim != 1 or t.shape != v.shape or len(t) < 2:
                raise ConfigError("tabulated force needs matching 1-d time and value arrays")
            if np.any(np.diff(t) <= 0) or t[0] != 0:
                raise ConfigError("tabulated force times must start at 0 and increase strictly")
            if not np.all(np.isfinite(v)):
                raise ConfigError("tabulated force contains non-finite values")
            object.__setattr__(self, "times", t)
            object.__setattr__(self, "values", v)

    @property
    def tabulated(self):
        return self.func is None

    @classmethod
    def constant(cls, F):
        return cls(func=lambda t: F)

    @classmethod
    def from_csv(cls, path):
        try:
            data = np.genfromtxt(path, delimiter=",", names=True)
            return cls(times=data["t"], values=data["force"])
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read force table {path!r}: {e}") from e

    def __call__(self, t):
        if self.tabulated:
            if np.any(np.asarray(t) > self.times[-1]):
                raise ConfigError(f"force requested at t={t!r} beyond the table end {self.times[-1]:.6g}")
            return np.interp(t, self.times, self.values)
        value = self.func(t)
        if not np.all(np.isfinite(value)):
            raise ConfigError(f"force is not finite at t={t!r}")
        return value


class DecoherenceProfile(NamedTuple):
    t: np.ndarray
    visibility: np.ndarray
    t_dec: Optional[float]
    cutoff_time: float


def _evolved_moments(model, T, mean0, cov0, t):
    prop = as_propagator(model)
    phi = prop.phase(t)
    sigma_t = thermal_covariance(model, T, t).matrix
    return phi, phi @ mean0, phi @ cov0 @ phi.T, sigma_t


def evolve_gaussian(model, T, state0: GaussianState, t) -> GaussianState:
    phi, mean, pushed, sigma_t = _evolved_moments(model, T, state0.mean_vector, state0.cov.matrix, float(t))
    return GaussianState.from_arrays(mean, pushed + sigma_t)


def evolve_cumulants(model, T, cumulants0, t):
    """Cumulant tensors transported by Phi(t); only the second picks up sigma_T(t).

    ``cumulants0[n-1]`` is the order-n tensor (shape (2,)*n) or None for zero.
    """
    if len(cumulants0) > 4:
        raise OrderUnsupportedError(f"cumulants up to order 4 are supported, got order {len(cumulants0)}")
    phi = as_propagator(model).phase(float(t))
    out = []
    for n, kappa in enumerate(cumulants0, start=1):
        kappa = np.zeros((2,) * n) if kappa is None else np.asarray(kappa, dtype=float)
        if kappa.shape != (2,) * n:
            raise ValueError(f"order-{n} cumulant must have shape {(2,) * n}, got {kappa.shape}")
        for axis in range(n):
            kappa = np.moveaxis(np.tensordot(phi, kappa, axes=([1], [axis])), 0, axis)
        if n == 2:
            kappa = kappa + thermal_covariance(model, T, t).matrix
        out.append(kappa)
    return out


def characteristic_function(model, T, state0: GaussianState, k, t, force: Optional[ForceProfile] = None):
    """Fourier transform of the reduced Wigner function, int exp(-i k.z) W(z, t) dz."""
    k = np.asarray(k, dtype=float)
    state = evolve_gaussian(model, T, state0, t)
    mean = state.mean_vector
    if force is not None:
        mean = mean + driven_mean(model, force, t)
    return complex(np.exp(-1j * k @ mean - 0.5 * k @ state.cov.matrix @ k))


def linear_entropy(model, T, state0: GaussianState, t):
    """S_L = 1 - 1/(2 sqrt(det sigma(t))); vectorized over t."""
    def one(s):
        _, _, pushed, sigma_t = _evolved_moments(model, T, state0.mean_vector, state0.cov.matrix, float(s))
        det = float(np.linalg.det(pushed + sigma_t))
        if det < MIN_DET - DET_TOL:
            raise NonPhysicalStateError(f"det sigma = {det:.12g} < 1/4 at t={s:.6g}")
        return 1 - 1 / (2 * np.sqrt(det))

    if np.ndim(t):
        return np.array([one(s) for s in np.ravel(t)]).reshape(np.shape(t))
    return one(t)


def _visibility(model, T, sup: SuperpositionState, t):
    if t == 0:
        return 1.0
    cov0 = sup.base.cov.matrix
    d, k = sup.offset, sup.wavevector
    phi, _, pushed, sigma_t = _evolved_moments(model, T, np.zeros(2), cov0, t)
    S = pushed + sigma_t
    C = sigma_t - sigma_t @ np.linalg.solve(S, sigma_t)
    kt = np.linalg.solve(phi.T, k)
    m = phi @ d
    exponent = -0.5 * kt @ C @ kt + 0.5 * m @ np.linalg.solve(S, m) - 0.5 * d @ np.linalg.solve(cov0, d)
    return float(np.exp(min(exponent, 0.0)))


def decoherence_profile(model, T, sup: SuperpositionState, grid, threads=None) -> DecoherenceProfile:
    """Fringe visibility at the phase-space midpoint, normalized to 1 at t = 0.

    t_dec is the first time the visibility falls below 1/e, interpolated in
    log visibility between the bracketing grid points.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("decoherence grid must be strictly increasing")
    vis = np.array(map_grid(lambda t: _visibility(model, T, sup, t), grid, threads=threads, desc="visibility"))
    threshold = np.exp(-1)
    t_dec = None
    below = np.flatnonzero(vis < threshold)
    if len(below):
        i = below[0]
        if i == 0:
            raise GridTooCoarseError(f"visibility already below 1/e at the first grid point t={grid[0]:.6g}")
        v0, v1 = vis[i - 1], vis[i]
        if (v0 - v1) / v0 > 0.1:
            raise GridTooCoarseError(
                f"visibility drops from {v0:.4g} to {v1:.4g} between t={grid[i - 1]:.6g} and t={grid[i]:.6g}")
        a, b = np.log(v0), np.log(v1)
        t_dec = float(grid[i - 1] + (grid[i] - grid[i - 1]) * (-1 - a) / (b - a))
        logger.info("decoherence time %.6g (%s superposition, delta_x=%g)", t_dec, sup.direction, sup.delta_x)
    cutoff_time = 1 / max(scales(model, T))
    return DecoherenceProfile(grid, vis, t_dec, cutoff_time)


def _exp_convolution(modes, order, force: ForceProfile, t):
    """int_0^t G^(order)(t - s) F(s) ds with F piecewise linear and G a sum of exponentials."""
    knots = force.times[force.times < t]
    knots = np.append(knots, t)
    vals = force(knots)
    total = 0j
    for amp, f in modes.exp_modes:
        c = amp * f ** order
        for a, b, fa, fb in zip(knots[:-1], knots[1:], vals[:-1], vals[1:]):
            beta = (fb - fa) / (b - a)
            alpha = fa - beta * a

            def prim(s):
                e = np.exp(f * (t - s))
                return -e * (alpha + beta * s) / f - beta * e / f ** 2

            total += c * (prim(b) - prim(a))
    return total.real


def driven_mean(model, force: ForceProfile, t, route="convolution"):
    """Force-induced mean shift (Phi * F)(t), or int Phi(t, s) F_eff(s) ds with route="effective_force"."""
    t = float(t)
    if t == 0:
        return np.zeros(2)
    prop = as_propagator(model)
    M = prop.M
    if route == "effective_force":
        inner = lambda s, row: (transition_matrix(prop, t, s) @ effective_force(prop, force, s))[row]
        marks = list(force.times[force.times < t]) if force.tabulated else None
        return np.array([integrate(lambda s: inner(s, row), 0.0, t, points=marks) for row in range(2)])
    if route != "convolution":
        raise ValueError(f"route must be 'convolution' or 'effective_force', got {route!r}")
    if force.tabulated and prop.modes is not None and prop.modes.exp_modes and not prop.modes.erfc_modes:
        return np.array([_exp_convolution(prop.modes, 0, force, t), M * _exp_convolution(prop.modes, 1, force, t)])
    points = list(force.times[force.times < t]) if force.tabulated else None
    x = integrate(lambda s: prop.green(t - s, 0) * force(s), 0.0, t, points=points)
    p = integrate(lambda s: M * prop.green(t - s, 1) * force(s), 0.0, t, points=points)
    return np.array([x, p])


def effective_force(model, force: ForceProfile, t):
    """F_eff(t) = F(t) + int_0^t [Phi'(t - s) + H(t) Phi(t - s)] F(s) ds, a (x, p) vector."""
    t = float(t)
    prop = as_propagator(model)
    out = np.array([0.0, float(force(t))])
    if t == 0:
        return out
    H = -prop.phase_rate(t) @ _checked_inverse(prop.phase(t), t)
    points = list(force.times[force.times < t]) if force.tabulated else None

    def kernel(s, row):
        col = prop.phase_rate(t - s)[:, 1] + H @ prop.phase(t - s)[:, 1]
        return col[row] * force(s)

    return out + np.array([integrate(lambda s: kernel(s, row), 0.0, t, points=points) for row in range(2)])


def apply_force(model, T, state0: GaussianState, force: ForceProfile, t, route="convolution") -> GaussianState:
    state = evolve_gaussian(model, T, state0, t)
    mean = state.mean_vector + driven_mean(model, force, t, route)
    return GaussianState(mean=(float(mean[0]), float(mean[1])), cov=state.cov)


def _kick_matrix(c, gamma0, M):
    if not 0 <= c <= 2:
        raise ValueError(f"kick strength must satisfy 0 <= c <= 2, got c={c!r}")
    return np.array([[1.0, 0.0], [-c * M * gamma0, 1.0]])


def initial_kick_transform(state, c, gamma0, M):
    """Bare-to-renormalized state under the initial kick p -> p - c M gamma0 x."""
    K = _kick_matrix(c, gamma0, M)
    if isinstance(state, SuperpositionState):
        base = initial_kick_transform(state.base, c, gamma0, M)
        return state.model_copy(update={"base": base, "shear": state.shear + K[1, 0]})
    mean = K @ state.mean_vector
    return GaussianState.from_arrays(mean, K @ state.cov.matrix @ K.T)
