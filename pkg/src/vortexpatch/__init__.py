"""Pseudo-spectral vortex-patch boundary dynamics in the unit disc."""

__version__ = "0.1.0"
