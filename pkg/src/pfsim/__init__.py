"""Spectral-Galerkin simulation of projective dynamics for linear hyperviscous SPDEs."""
__version__ = "0.1.0"

from .lattice import Lattice, SpectralField, energy_median, mode_field
from .noise import NoiseSpec
from .integrator import ModelParams, Propagator, simulate, step
from .seeding import derive_seed

__all__ = ["Lattice", "SpectralField", "energy_median", "mode_field", "NoiseSpec",
           "ModelParams", "Propagator", "simulate", "step", "derive_seed", "__version__"]
