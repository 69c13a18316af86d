"""Multiscale analysis tools for a spinless interacting fermion chain."""
from .model import (ModelParams, NoFermiPoint, dispersion, fermi_data,
                    free_propagator_momentum, free_schwinger_matsubara,
                    free_schwinger_time, potential_fourier)

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "NoFermiPoint", "dispersion", "fermi_data",
    "free_propagator_momentum", "free_schwinger_matsubara",
    "free_schwinger_time", "potential_fourier",
]
