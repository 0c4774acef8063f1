"""Reconstruction of sound-soft star-shaped obstacles from scattered-field data."""

from .forward import ScatterConfig, forward_data, solve_forward
from .geometry import StarCoeffs, is_valid, relative_error

__all__ = ["ScatterConfig", "StarCoeffs", "forward_data", "is_valid", "relative_error", "solve_forward"]
__version__ = "0.1.0"
