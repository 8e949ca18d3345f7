"""Brute-force verifiers that share no algebra with the closed forms.

The Langevin equation is solved in integral form on a uniform grid,

    x(t) = x0 + (1/M) int_0^t p
    p(t) = p0 - M Omega^2 int_0^t x - 2 int_0^t Gamma_1(t - s) p(s) ds
           - 2 M x0 Gamma_1(t) + Xi(t),

with Gamma_1 the antiderivative of gamma and Xi(t) = int_0^t xi. The
initial slip -2 M x0 gamma(t) enters through its exact integral. Noise is
drawn as exact Gaussian increments of Xi on the grid.
"""
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.linalg import LinAlgError, cholesky, toeplitz

from qbm.config import settings
from qbm.covariance import Covariance2, Response, _linear, _marks, _weight
from qbm.errors import FactorizationError, GridTooCoarseError, StabilityError
from qbm.master import DiffusionMatrix
from qbm.propagator import _checked_inverse, as_propagator
from qbm.quadrature import fourier_half_line, half_line, integrate
from qbm.spectrum import SpectralModel, _temperature, damping_primitive, damping_time, scales
from qbm.state import GaussianState
from qbm.utils import logger, map_grid, sym

GRID_RESOLUTION = 0.1
REGULARIZATION = 1e-12


class VolterraGrid(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    t_max: float = Field(gt=0)
    n_steps: int = Field(ge=16)
    scheme: Literal["trapezoid", "product"] = "product"

    @property
    def h(self):
        return self.t_max / self.n_steps

    @property
    def times(self):
        return np.linspace(0.0, self.t_max, self.n_steps + 1)

    def halved(self):
        """Every other node of this grid, as a grid of its own."""
        n = self.n_steps // 2
        return VolterraGrid.model_construct(t_max=2 * n * self.h, n_steps=n, scheme=self.scheme)


@dataclass(frozen=True)
class VolterraResult:
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    error_estimate: Optional[float] = None

    @property
    def z(self):
        return np.stack([self.x, self.p], axis=1)


@dataclass(frozen=True)
class NoiseEnsemble:
    """Increments of Xi over each grid step, one column per trajectory."""
    n_traj: int
    seed: int
    h: float
    increments: np.ndarray

    @property
    def integrated(self):
        zero = np.zeros((1,) + self.increments.shape[1:])
        return np.concatenate([zero, np.cumsum(self.increments, axis=0)])

    @property
    def samples(self):
        """Step averages of xi."""
        return self.increments / self.h


@dataclass(frozen=True)
class LangevinStatistics:
    t: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    mean_stderr: np.ndarray
    cov_stderr: np.ndarray
    n_traj: int
    regularization: float = 0.0


def check_resolution(model: SpectralModel, grid: VolterraGrid, T=0.0):
    fastest = max(scales(model, T))
    if grid.h > GRID_RESOLUTION / fastest * (1 + 1e-12):
        raise GridTooCoarseError(
            f"step h={grid.h:.6g} does not resolve the fastest scale {fastest:.6g} "
            f"(need h <= {GRID_RESOLUTION / fastest:.6g}, n_steps >= {int(np.ceil(grid.t_max * fastest / GRID_RESOLUTION))})")
    return fastest


@lru_cache(maxsize=32)
def _weights(model: SpectralModel, h, n, scheme):
    """Quadrature weights (a_m, b_m) of int Gamma_1(u) p(t_n - u) du on the step [m h, (m+1) h]."""
    u = h * np.arange(n + 1)
    g1 = np.array([damping_primitive(model, s, 1) for s in u])
    if scheme == "trapezoid":
        return 0.5 * h * g1[:-1], 0.5 * h * g1[1:], g1
    g2 = np.array([damping_primitive(model, s, 2) for s in u])
    g3 = np.array([damping_primitive(model, s, 3) for s in u])
    A = np.diff(g2)
    # (1/h) int Gamma_1(u) (u - u_m) du by parts
    B = g2[1:] - np.diff(g3) / h
    return A - B, B, g1


def _march(model, z0, grid, Xi):
    M, Om2, h, n = model.M, model.Omega ** 2, grid.h, grid.n_steps
    a, b, g1 = _weights(model, h, n, grid.scheme)
    ab = a[1:] + b[:-1]
    x0, p0 = z0
    x, p, X = (np.empty((n + 1,) + x0.shape) for _ in range(3))
    x[0], p[0], X[0] = x0, p0, 0.0
    denom = 1 + Om2 * h * h / 4 + 2 * a[0]
    for k in range(1, n + 1):
        known = b[k - 1] * p0
        if k > 1:
            known = known + ab[:k - 1] @ p[k - 1:0:-1]
        rhs = (p0 - M * Om2 * (X[k - 1] + h * x[k - 1] + h * h / (4 * M) * p[k - 1])
               - 2 * known - 2 * M * x0 * g1[k] + Xi[k])
        p[k] = rhs / denom
        x[k] = x[k - 1] + h / (2 * M) * (p[k - 1] + p[k])
        X[k] = X[k - 1] + 0.5 * h * (x[k - 1] + x[k])
    return x, p


def volterra_solve(model: SpectralModel, z0, grid: VolterraGrid, xi=None, check=True, T=0.0) -> VolterraResult:
    """Trajectory of the Langevin equation; ``xi`` is the integrated noise Xi(t_n) on the grid.

    ``z0`` may be a pair or a (2, B) batch of initial points; ``xi`` then has
    shape (n_steps + 1, B). ``T`` only enters the resolution check.
    """
    z0 = np.asarray(z0, dtype=float)
    if z0.shape[0] != 2:
        raise ValueError(f"initial point must have leading dimension 2, got shape {z0.shape}")
    n = grid.n_steps
    Xi = np.zeros((n + 1,) + z0.shape[1:]) if xi is None else np.asarray(xi, dtype=float)
    if Xi.shape != (n + 1,) + z0.shape[1:]:
        raise ValueError(f"integrated noise must have shape {(n + 1,) + z0.shape[1:]}, got {Xi.shape}")
    fastest = check_resolution(model, grid, T if xi is not None else 0.0)
    x, p = _march(model, z0, grid, Xi)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
        raise StabilityError(f"Volterra march produced non-finite values (h={grid.h:.6g})")
    err = None
    if check:
        coarse = grid.halved()
        xc, pc = _march(model, z0, coarse, Xi[::2][:coarse.n_steps + 1])
        m = coarse.n_steps + 1
        err = max(np.max(np.abs(x[:2 * m - 1:2] - xc)), np.max(np.abs(p[:2 * m - 1:2] - pc))) / 3
        size = max(np.max(np.abs(x)), np.max(np.abs(p)), 1e-300)
        bound = 10 * (grid.h * fastest) ** 2 * size * max(1.0, fastest * grid.t_max)
        if err > bound:
            raise StabilityError(f"Volterra error estimate {err:.3g} exceeds {bound:.3g} (h={grid.h:.6g})")
        logger.debug("Volterra march h=%g error estimate %.3g", grid.h, err)
    return VolterraResult(grid.times, x, p, err)


def volterra_propagator(model: SpectralModel, grid: VolterraGrid, check=True):
    """Phi(t_n) from the two homogeneous columns; returns (t, Phi) with Phi of shape (n+1, 2, 2)."""
    res = volterra_solve(model, np.eye(2), grid, check=check)
    return res.t, np.stack([res.x, res.p], axis=1)


def _increment_amplitude(model, T, h):
    # w(omega) |int_0^h e^{i omega s} ds|^2 = w(omega) h^2 sinc^2(omega h / 2 pi)
    w = _weight(model, T)
    return lambda om: w(om) * h * h * np.sinc(om * h / (2 * np.pi)) ** 2


def noise_matrix(model: SpectralModel, T=None, grid: VolterraGrid = None, threads=None):
    """Covariance of the noise increments int_{t_j}^{t_j+h} xi over the grid steps (Toeplitz)."""
    T = _temperature(model, T)
    h, n = grid.h, grid.n_steps
    f = _increment_amplitude(model, T, h)
    marks = sorted(set(scales(model, T) + [2 * np.pi / h]))
    upper = model.family.omega_max if model.kind == "custom" else None

    def lag(k):
        if k == 0:
            return half_line(f, marks, upper=upper)
        return fourier_half_line(f, k * h, "cos", marks, upper=upper)

    column = np.array(map_grid(lambda k: lag(int(round(k))), np.arange(n), threads=threads, desc="noise lags"))
    return toeplitz(column)


@lru_cache(maxsize=8)
def _noise_factor(model, T, t_max, n_steps):
    grid = VolterraGrid(t_max=t_max, n_steps=n_steps)
    C = noise_matrix(model, T, grid)
    n = len(C)
    trace = float(np.trace(C))
    low = float(np.min(np.linalg.eigvalsh(C)))
    if low < -1e-10 * trace:
        logger.warning("noise increment matrix has eigenvalue %.3g (trace %.3g)", low, trace)
    try:
        return cholesky(C, lower=True), 0.0
    except LinAlgError:
        shift = REGULARIZATION * trace / n
        logger.warning("noise increment matrix not positive definite; regularizing by %.3g", shift)
    try:
        return cholesky(C + shift * np.eye(n), lower=True), shift
    except LinAlgError as e:
        raise FactorizationError(f"noise increment matrix is indefinite beyond regularization "
                                 f"(min eigenvalue {low:.3g}, trace {trace:.3g})") from e


def _normals(seed, start, stop, size):
    """Standard normals for trajectories [start, stop); each trajectory owns its Philox stream."""
    out = np.empty((size, stop - start))
    for j, i in enumerate(range(start, stop)):
        rng = np.random.Generator(np.random.Philox(key=seed).jumped(i))
        out[:, j] = rng.standard_normal(size)
    return out


def draw_noise(model: SpectralModel, T, grid: VolterraGrid, n_traj, seed, start=0) -> NoiseEnsemble:
    T = _temperature(model, T)
    L, _ = _noise_factor(model, T, grid.t_max, grid.n_steps)
    normals = _normals(seed, start, start + n_traj, 2 + grid.n_steps)[2:]
    return NoiseEnsemble(n_traj, seed, grid.h, L @ normals)


def sample_langevin(model: SpectralModel, T, state0: GaussianState, grid: VolterraGrid, n_traj, seed,
                    threads=None, checkpoints=None, noise=True) -> LangevinStatistics:
    """Ensemble mean and covariance of Langevin trajectories at the checkpoint nodes.

    Trajectories run in fixed chunks of ``settings.CHUNK`` and statistics are
    reduced over the concatenated samples, so results do not depend on
    ``threads``.
    """
    T = _temperature(model, T)
    if n_traj < 2:
        raise ValueError(f"need at least 2 trajectories, got n_traj={n_traj!r}")
    seed = int(seed)
    if not 0 <= seed < 2 ** 64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed!r}")
    n = grid.n_steps
    idx = np.arange(n + 1) if checkpoints is None else np.asarray(checkpoints, dtype=int)
    L, shift = (_noise_factor(model, T, grid.t_max, n) if noise else (None, 0.0))
    chol0 = np.linalg.cholesky(state0.cov.matrix)
    mean0 = state0.mean_vector[:, None]
    check_resolution(model, grid, T if noise else 0.0)

    def chunk(start):
        start = int(start)
        stop = min(start + settings.CHUNK, n_traj)
        normals = _normals(seed, start, stop, 2 + n)
        z0 = mean0 + chol0 @ normals[:2]
        Xi = None
        if noise:
            Xi = np.concatenate([np.zeros((1, stop - start)), np.cumsum(L @ normals[2:], axis=0)])
        res = volterra_solve(model, z0, grid, Xi, check=start == 0, T=T)
        return np.stack([res.x[idx], res.p[idx]], axis=1)

    starts = np.arange(0, n_traj, settings.CHUNK)
    z = np.concatenate(map_grid(chunk, starts, threads=threads, desc="trajectories"), axis=2)
    mean = z.mean(axis=2)
    d = z - mean[:, :, None]
    prod = d[:, :, None, :] * d[:, None, :, :]
    cov = prod.sum(axis=3) / (n_traj - 1)
    root_n = np.sqrt(n_traj)
    return LangevinStatistics(grid.times[idx], mean, cov, z.std(axis=2, ddof=1) / root_n,
                              prod.std(axis=3, ddof=1) / root_n, n_traj, shift)


def quadrature_sigma(model: SpectralModel, T=None, t=0.0, epsabs=1e-9, epsrel=1e-8) -> Covariance2:
    """sigma_T(t) by nested quadrature: time transforms of the propagator inside a frequency integral."""
    T = _temperature(model, T)
    t = float(t)
    if t == 0:
        return Covariance2.zero()
    prop = as_propagator(model)
    M = model.M
    channels = (lambda v: prop.green(t - v), lambda v: M * prop.green(t - v, 1))
    weight = _weight(model, T)

    @lru_cache(maxsize=None)
    def transforms(om):
        out = []
        for psi in channels:
            if om == 0:
                out += [integrate(psi, 0.0, t, epsabs=1e-13, epsrel=1e-12), 0.0]
            else:
                out += [integrate(psi, 0.0, t, epsabs=1e-13, epsrel=1e-12, weight=kind, wvar=om)
                        for kind in ("cos", "sin")]
        return out

    def entry(a, b):
        def f(om):
            c = transforms(float(om))
            return weight(om) * (c[2 * a] * c[2 * b] + c[2 * a + 1] * c[2 * b + 1])
        return f

    marks = _marks(model, T) + [2 * np.pi / t]
    upper = model.family.omega_max if model.kind == "custom" else None
    sxx, sxp, spp = (half_line(entry(a, b), marks, epsabs, epsrel, upper=upper)
                     for a, b in ((0, 0), (0, 1), (1, 1)))
    return Covariance2(sxx, sxp, spp)


def _graded_panels(t, width, levels=4):
    """Break points on [0, t] refined geometrically toward both ends."""
    width = min(width, t / 4)
    inner = [width * 10.0 ** -k for k in range(levels)]
    points = {0.0, t} | set(inner) | {t - w for w in inner}
    return np.array(sorted(points))


def _gauss_nodes(edges, order=20):
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        nodes.append(0.5 * (b - a) * x + 0.5 * (b + a))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def hpz_form_diffusion(model: SpectralModel, T=None, t=0.0, include_nonlocal=True, order=16) -> DiffusionMatrix:
    """D(t) from the noise correlation of the effective local equation.

    Eliminating z0 in favour of z(t) turns the memory force into a local
    drift plus a noise functional int X(s) xi(s) ds, so that with
    Y(s) = <z_T(t) xi(s)>

        D = Sy(e_p v^T),   v = Y(t) + int_0^t X(s) Y(s) ds.

    ``include_nonlocal=False`` drops the memory functional.
    """
    T = _temperature(model, T)
    t = float(t)
    M = model.M
    if t == 0:
        return DiffusionMatrix(M, 0.0, 0.0)
    prop = as_propagator(model)
    resp = Response(model, t)
    weight, marks = _weight(model, T), _marks(model, T)

    def Y(s):
        return np.array([_linear(weight, resp, 0, marks, shift=s), M * _linear(weight, resp, 1, marks, shift=s)])

    v = Y(t)
    if include_nonlocal:
        fastest = max(scales(model, T))
        memory = lambda d, psi: integrate(lambda r: damping_time(model, d - r) * psi(r), 0.0, d,
                                          points=[d - 5 / fastest])
        phi_inv = _checked_inverse(prop.phase(t), t)
        g = np.array([memory(t, lambda r: M * M * prop.green(r, 2)), memory(t, lambda r: M * prop.green(r, 1))])
        slip = 2 * M * damping_time(model, t)
        s, w = _gauss_nodes(_graded_panels(t, 5 / fastest), order)
        total = np.zeros(2)
        for si, wi in zip(s, w):
            d = t - si
            col = phi_inv @ prop.phase(d)[:, 1]
            X = slip * col[0] + 2 * g @ col - 2 * memory(d, lambda r: M * prop.green(r, 1))
            total += wi * X * Y(si)
        v = v + total
    e = np.array([0.0, 1.0])
    return DiffusionMatrix.from_matrix(M, sym(np.outer(e, v)))
