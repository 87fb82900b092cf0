"""Full-field simulation of a Grover-search optical cavity."""
from .field import (BeamParams, Field, GridSpec, PlaneMismatch, SamplingError, disc_mask,
                    make_airy_input, make_gaussian_input, make_spot_mode, orthonormalize, overlap)
from .optics import (GroverIterator, LossModel, PlateSpec, Spot, apply_plate, grover_round_trip,
                     lens_fourier)
from .records import Spectrum, Trajectory

__all__ = [
    "BeamParams", "Field", "GridSpec", "PlaneMismatch", "SamplingError", "disc_mask",
    "make_airy_input", "make_gaussian_input", "make_spot_mode", "orthonormalize", "overlap",
    "GroverIterator", "LossModel", "PlateSpec", "Spot", "apply_plate", "grover_round_trip",
    "lens_fourier", "Spectrum", "Trajectory",
]
__version__ = "0.1.0"
