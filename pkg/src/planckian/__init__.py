"""Wavepacket dynamics in moving disorder: from Anderson localization to Planckian diffusion."""

__version__ = "0.1.0"

from .core import CONSTANTS, HBAR, K_B, M_E, Grid, WaveField, gaussian_packet, make_grid, norm  # noqa: E402
from .errors import ConfigError, EstimationError, NumericalError  # noqa: E402

__all__ = ["CONSTANTS", "HBAR", "K_B", "M_E", "Grid", "WaveField", "gaussian_packet", "make_grid", "norm",
           "ConfigError", "EstimationError", "NumericalError", "__version__"]
