"""Sequential recommendation by spherical diffusion over multi-interest guidance."""

__version__ = "0.1.0"
