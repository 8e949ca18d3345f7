"""Command-line front end.

    qbm <command> [--config PATH] [--set key=value ...] [--out PATH] [--format csv|json]

Natural units throughout: hbar = k_B = 1. The configuration is a flat
``key = value`` file; ``--set`` overrides win over the file. Every output
embeds the library version and the full resolved configuration.
"""
import argparse
import json
import sys
from typing import Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from qbm import __version__
from qbm.config import settings
from qbm.covariance import late_covariance, late_covariance_ohmic_closed, thermal_covariance_series
from qbm.errors import (ConfigError, DivergenceError, NonPhysicalStateError, NoStationaryLimitError, NumericalError,
                        QBMError, ValidationFailure)
from qbm.master import coefficient_series, late_time_coefficients, lyapunov_residual
from qbm.oracle import VolterraGrid, sample_langevin, volterra_propagator
from qbm.propagator import (as_propagator, classify_regime, green_laplace, inverse_laplace_numeric,
                            late_pseudo_hamiltonian)
from qbm.spectrum import (SpectralModel, damping_laplace, damping_time, frequency_renormalization,
                          load_spectrum_csv, noise_kernel, scales, validate_damping_candidate)
from qbm.state import (ForceProfile, GaussianState, SuperpositionState, decoherence_profile, driven_mean,
                       evolve_gaussian, initial_kick_transform, linear_entropy)
from qbm.utils import fmt17, logger, time_grid

COMMANDS = ("propagator", "covariance", "diffusion", "state", "decohere", "force", "validate", "spectrum-check")
MC_CHECKPOINTS = 10
MC_STDERR = 3.0


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    family: Literal["ohmic", "sub_ohmic", "supra_ohmic", "custom"] = "ohmic"
    M: float = Field(default=1.0, gt=0)
    Omega: float = Field(default=1.0, gt=0)
    gamma: float = Field(default=0.1, ge=0)
    Lambda: float = Field(default=20.0, gt=0)
    T: float = Field(default=0.0, ge=0)
    spectrum_csv: Optional[str] = None
    rescale_coupling: bool = False

    t_max: float = Field(default=10.0, gt=0)
    n_points: int = Field(default=101, ge=1)
    spacing: Literal["linear", "log"] = "linear"

    x0: float = 0.0
    p0: float = 0.0
    sxx0: Optional[float] = Field(default=None, gt=0)
    spp0: Optional[float] = Field(default=None, gt=0)
    kick: float = Field(default=0.0, ge=0, le=2)

    delta_x: float = Field(default=1.0, gt=0, description="half separation: lobes sit at +-delta_x")
    direction: Literal["position", "momentum"] = "position"

    force: float = 0.0
    force_csv: Optional[str] = None
    force_route: Literal["convolution", "effective_force"] = "convolution"

    epsabs: float = Field(default=1e-10, gt=0)
    epsrel: float = Field(default=1e-10, gt=0)
    validate_tol: float = Field(default=1e-5, gt=0)
    mc_traj: int = Field(default=0, ge=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    threads: int = Field(default=1, ge=1)

    def build_model(self) -> SpectralModel:
        if self.family == "ohmic":
            return SpectralModel.ohmic(self.M, self.Omega, self.gamma, self.Lambda, self.T)
        if self.family == "sub_ohmic":
            return SpectralModel.sub_ohmic(self.M, self.Omega, self.gamma, self.T)
        if self.family == "supra_ohmic":
            gamma2 = self.gamma * self.Omega / self.Lambda if self.rescale_coupling else self.gamma
            return SpectralModel.supra_ohmic(self.M, self.Omega, gamma2, self.Lambda, self.T)
        if not self.spectrum_csv:
            raise ConfigError("family=custom needs spectrum_csv")
        model = SpectralModel.ohmic(self.M, self.Omega, 0.0, 1.0, self.T)
        return model.with_family(load_spectrum_csv(self.spectrum_csv))

    def grid(self):
        return time_grid(self.t_max, self.n_points, self.spacing)

    def initial_state(self, kicked=True) -> GaussianState:
        state = GaussianState.coherent(self.M, self.Omega, self.x0, self.p0)
        if self.sxx0 or self.spp0:
            c = state.cov
            state = GaussianState.from_arrays(state.mean, [[self.sxx0 or c.sxx, 0.0], [0.0, self.spp0 or c.spp]])
        if kicked and self.kick:
            state = initial_kick_transform(state, self.kick, self.gamma, self.M)
        return state

    def check(self):
        """Build the model, grid and initial state once so bad inputs surface as ConfigError."""
        try:
            self.build_model()
            self.grid()
            self.initial_state()
        except (ValueError, NonPhysicalStateError) as e:
            raise ConfigError(f"invalid configuration: {e}") from e


class Table(NamedTuple):
    columns: tuple
    rows: list
    footer: dict


def read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def load_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        values[key] = value
    if args.seed is not None:
        values["seed"] = args.seed
    if args.threads is not None:
        values["threads"] = args.threads
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def _apply_settings(config: RunConfig):
    settings.QUAD_EPSABS = config.epsabs
    settings.QUAD_EPSREL = config.epsrel
    settings.THREADS = config.threads


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fmt17(v)
    return str(v)


def render(config: RunConfig, table: Table, fmt="csv"):
    if fmt == "json":
        doc = {"version": __version__, "config": config.model_dump(), "columns": list(table.columns),
               "rows": _plain(table.rows), "footer": _plain(table.footer)}
        return json.dumps(doc, sort_keys=True) + "\n"
    lines = [f"# qbm {__version__}"]
    lines += [f"# {k}={'' if v is None else v}" for k, v in config.model_dump().items()]
    lines.append(",".join(table.columns))
    lines += [",".join(_cell(v) for v in row) for row in table.rows]
    lines.append("# " + json.dumps(_plain(table.footer), sort_keys=True))
    return "\n".join(lines) + "\n"


def cmd_propagator(config: RunConfig, args) -> Table:
    model = config.build_model()
    prop = as_propagator(model)
    rows = []
    for t in config.grid():
        g, g1, g2 = (prop.green(t, n) for n in range(3))
        rows.append((t, g, g1, g2, float(np.linalg.det(prop.phase(t)))))
    footer = {}
    if args.regime:
        if config.family != "ohmic":
            raise ConfigError("--regime needs family=ohmic")
        label = classify_regime(config.M, config.Omega, config.gamma, config.Lambda).value
        print(label)
        footer["regime"] = label
    return Table(("t", "G", "Gdot", "Gddot", "detPhi"), rows, footer)


def _stationary_footer(model, config):
    try:
        H = late_pseudo_hamiltonian(model)
        late = late_time_coefficients(model, config.T)
    except NoStationaryLimitError as e:
        logger.info("no stationary limit: %s", e)
        return {"sigma_inf": None, "lyapunov_residual": None, "stationary": str(e)}
    if config.family == "ohmic" and config.gamma > 0:
        sigma = late_covariance_ohmic_closed(config.M, config.Omega, config.gamma, config.Lambda, config.T)
    else:
        sigma = late_covariance(model, config.T)
    D = np.array([[0.0, -late.Dxp_inf / 2], [-late.Dxp_inf / 2, config.M * late.Dpp_inf]])
    return {"sigma_inf": [sigma.sxx, sigma.sxp, sigma.spp],
            "lyapunov_residual": lyapunov_residual(H, D, sigma.matrix)}


def cmd_covariance(config: RunConfig, args) -> Table:
    model = config.build_model()
    series = thermal_covariance_series(model, config.T, config.grid(), threads=config.threads)
    rows = [(t, a, b, c, d) for t, a, b, c, d in zip(series.t, series.sxx, series.sxp, series.spp, series.det)]
    return Table(("t", "sxx", "sxp", "spp", "det"), rows, _stationary_footer(model, config))


def cmd_diffusion(config: RunConfig, args) -> Table:
    model = config.build_model()
    grid = config.grid()
    if len(grid) < 2:
        raise ConfigError("the diffusion series needs n_points >= 2")
    series = coefficient_series(model, grid, config.T, threads=config.threads)
    rows = list(zip(series.t, series.Omega_R_sq, series.Gamma, series.D_xp, series.D_pp))
    footer = {"poles": list(series.poles)}
    try:
        footer["late"] = late_time_coefficients(model, config.T)._asdict()
    except NoStationaryLimitError:
        footer["late"] = None
    return Table(("t", "OmegaR2", "Gamma", "Dxp", "Dpp"), rows, footer)


def cmd_state(config: RunConfig, args) -> Table:
    model = config.build_model()
    state0 = config.initial_state()
    rows = []
    for t in config.grid():
        s = evolve_gaussian(model, config.T, state0, t)
        rows.append((t, s.mean[0], s.mean[1], s.cov.sxx, s.cov.sxp, s.cov.spp, s.cov.det,
                     linear_entropy(model, config.T, state0, t)))
    return Table(("t", "x", "p", "sxx", "sxp", "spp", "det", "S_L"), rows, {"kick": config.kick})


def cmd_decohere(config: RunConfig, args) -> Table:
    """Visibility decay of a two-lobe superposition at +-delta_x.

    delta_x is half the lobe separation, so the ohmic high-temperature
    estimate reads t_dec = 1/(8 M gamma T delta_x^2).
    """
    model = config.build_model()
    sup = SuperpositionState(base=config.initial_state(kicked=False), delta_x=config.delta_x,
                             direction=config.direction)
    if config.kick:
        sup = initial_kick_transform(sup, config.kick, config.gamma, config.M)
    profile = decoherence_profile(model, config.T, sup, config.grid(), threads=config.threads)
    footer = {"t_dec": profile.t_dec, "cutoff_time": profile.cutoff_time}
    if config.family == "ohmic" and config.T > 0 and config.gamma > 0:
        footer["t_dec_estimate"] = 1 / (8 * config.M * config.gamma * config.T * config.delta_x ** 2)
    return Table(("t", "visibility"), list(zip(profile.t, profile.visibility)), footer)


def cmd_force(config: RunConfig, args) -> Table:
    model = config.build_model()
    force = ForceProfile.from_csv(config.force_csv) if config.force_csv else ForceProfile.constant(config.force)
    rows = []
    for t in config.grid():
        x, p = driven_mean(model, force, t, config.force_route)
        rows.append((t, x, p))
    return Table(("t", "x_F", "p_F"), rows, {"route": config.force_route})


def cmd_spectrum_check(config: RunConfig, args) -> Table:
    model = config.build_model()
    rows = []
    for t in config.grid():
        try:
            nu = noise_kernel(model, t, config.T)
        except DivergenceError:
            nu = float("nan")
        try:
            gamma = damping_time(model, t)
        except DivergenceError:
            gamma = float("nan")
        rows.append((t, gamma, nu))
    footer = {"scales": scales(model, config.T)}
    try:
        footer["delta_Omega2"] = frequency_renormalization(model)
    except DivergenceError:
        footer["delta_Omega2"] = None
    if model.kind != "custom":
        check = validate_damping_candidate(lambda s: damping_laplace(model, s), model)
        footer["damping_roundtrip"] = {"accepted": check.accepted, "max_deviation": check.max_deviation}
    return Table(("t", "gamma", "nu"), rows, footer)


def _check(rows, name, value, tol):
    status = "PASS" if np.isfinite(value) and value <= tol else "FAIL"
    rows.append((name, status, float(value), float(tol)))
    logger.info("%s %s: %.3g (tol %.3g)", status, name, value, tol)


def _skip(rows, name, reason):
    rows.append((name, "SKIP", float("nan"), float("nan")))
    logger.info("SKIP %s: %s", name, reason)


def _mc_checkpoints(n_steps, count=MC_CHECKPOINTS):
    return sorted({int(round(n_steps * k / count)) for k in range(1, count + 1)})


def cmd_validate(config: RunConfig, args) -> Table:
    """Oracle triangle, Lyapunov closure, uncertainty and (optionally) Monte Carlo checks."""
    model = config.build_model()
    tol = config.validate_tol
    rows = []
    prop = as_propagator(model)

    horizon = min(config.t_max, 10 / config.Omega)
    fastest = max(scales(model, 0.0))
    n = 2 * int(np.ceil(horizon * fastest / 0.1 / 2))
    coarse = VolterraGrid(t_max=horizon, n_steps=n)
    fine = VolterraGrid(t_max=horizon, n_steps=2 * n)
    _, phi_h = volterra_propagator(model, coarse)
    _, phi_h2 = volterra_propagator(model, fine, check=False)
    richardson = (4 * phi_h2[::2] - phi_h) / 3
    idx = np.linspace(n // 5, n, 5).astype(int)
    times = coarse.times[idx]
    closed = np.array([prop.green(t) for t in times])
    volterra = richardson[idx, 0, 1]
    method = "dehoog" if model.kind == "custom" else "talbot"
    laplace = np.array([inverse_laplace_numeric(lambda s: green_laplace(model, s), t, method=method,
                                                scale=1 / config.M / config.Omega) for t in times])
    _check(rows, "G closed vs volterra", np.max(np.abs(closed - volterra)), tol)
    _check(rows, "G closed vs laplace", np.max(np.abs(closed - laplace)), tol)
    _check(rows, "G volterra vs laplace", np.max(np.abs(volterra - laplace)), tol)

    footer = _stationary_footer(model, config)
    if footer["lyapunov_residual"] is None:
        _skip(rows, "lyapunov closure", footer["stationary"])
        _skip(rows, "stationary uncertainty", footer["stationary"])
    else:
        sxx, sxp, spp = footer["sigma_inf"]
        _check(rows, "lyapunov closure", footer["lyapunov_residual"], 1e-8 * max(1.0, sxx * spp))
        _check(rows, "stationary uncertainty", max(0.25 - (sxx * spp - sxp * sxp), 0.0), 1e-10)

    state0 = config.initial_state()
    dets = [evolve_gaussian(model, config.T, state0, t).cov.det for t in config.grid()]
    _check(rows, "uncertainty along trajectory", max(0.25 - min(dets), 0.0), 1e-10)

    if config.mc_traj:
        grid = VolterraGrid(t_max=min(horizon, 2.0),
                            n_steps=max(16, int(np.ceil(min(horizon, 2.0) * max(scales(model, config.T)) / 0.1))))
        stats = sample_langevin(model, config.T, state0, grid, config.mc_traj, config.seed,
                                threads=config.threads, checkpoints=_mc_checkpoints(grid.n_steps))
        z = []
        for i, t in enumerate(stats.t):
            exact = evolve_gaussian(model, config.T, state0, t)
            z.append(np.abs(stats.mean[i] - exact.mean_vector) / np.maximum(stats.mean_stderr[i], 1e-300))
            z.append(np.abs(stats.cov[i] - exact.cov.matrix) / np.maximum(stats.cov_stderr[i], 1e-300))
        _check(rows, "monte carlo moments (stderr units)", float(max(np.max(v) for v in z)), MC_STDERR)

    footer["failed"] = [r[0] for r in rows if r[1] == "FAIL"]
    return Table(("check", "status", "value", "tolerance"), rows, footer)


HANDLERS = {
    "propagator": cmd_propagator,
    "covariance": cmd_covariance,
    "diffusion": cmd_diffusion,
    "state": cmd_state,
    "decohere": cmd_decohere,
    "force": cmd_force,
    "validate": cmd_validate,
    "spectrum-check": cmd_spectrum_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="flat key = value configuration file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("--out", type=str, default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (64-bit)")
    common.add_argument("--threads", type=int, default=None, help="worker threads for grid maps")

    parser = argparse.ArgumentParser(
        prog="qbm", description="Exact quantum Brownian motion master-equation engine (units hbar = k_B = 1)")
    parser.add_argument("--version", action="version", version=f"qbm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common], help=(HANDLERS[name].__doc__ or name).splitlines()[0],
                           description=HANDLERS[name].__doc__)
        if name == "propagator":
            p.add_argument("--regime", action="store_true", help="print the damping regime (ohmic only)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        _apply_settings(config)
        config.check()
        table = HANDLERS[args.command](config, args)
        text = render(config, table, args.format)
        if args.out:
            with open(args.out, "w", newline="\n") as fh:
                fh.write(text)
        else:
            sys.stdout.write(text)
        if table.footer.get("failed"):
            raise ValidationFailure(f"validation failed: {', '.join(table.footer['failed'])}")
    except ConfigError as e:
        logger.error("configuration error: %s", e)
        return 2
    except (NumericalError, ValueError) as e:
        logger.error("numerical failure: %s", e)
        return 3
    except ValidationFailure as e:
        logger.error("%s", e)
        return 4
    except QBMError as e:
        logger.error("%s", e)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
