"""Cross-diffusion of two hard-sphere species: models, entropies, solvers and diagnostics."""

from .model import Coefficients, ModelParams, ParameterError, compute_coefficients
from .grid import Grid1D, SystemState

__all__ = [
    "Coefficients",
    "Grid1D",
    "ModelParams",
    "ParameterError",
    "SystemState",
    "compute_coefficients",
]

__version__ = "0.1.0"
