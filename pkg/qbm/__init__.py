"""Exact solver for the quantum Brownian motion master equation (hbar = k_B = 1)."""
__version__ = "0.1.0"

from qbm.spectrum import SpectralModel
from qbm.propagator import get_propagator, green_time, phase_propagator
from qbm.covariance import Covariance2, late_covariance, thermal_covariance
from qbm.master import diffusion_matrix, late_time_coefficients, pseudo_hamiltonian
from qbm.state import GaussianState, SuperpositionState, evolve_gaussian

__all__ = [
    "__version__", "SpectralModel", "get_propagator", "green_time", "phase_propagator",
    "Covariance2", "late_covariance", "thermal_covariance", "diffusion_matrix",
    "late_time_coefficients", "pseudo_hamiltonian", "GaussianState", "SuperpositionState",
    "evolve_gaussian",
]
