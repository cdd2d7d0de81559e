"""Reconstruction of spatially distributed dielectric constants from
single-measurement, multi-frequency backscatter data.

The package covers the full chain: synthetic data generation through a
volume-integral forward solver, time-domain and frequency-domain
preprocessing of detector traces, angular-spectrum propagation of plane
data, and the multi-frequency inversion that recovers c(x) on a 3D grid.
"""

from .errors import NumericalError, SolverConvergenceError, ValidationError

__version__ = "0.1.0"

__all__ = [
    "NumericalError",
    "SolverConvergenceError",
    "ValidationError",
    "__version__",
]
