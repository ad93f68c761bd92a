"""Continuous spectral reconstruction from RGB with implicit neural representation."""

__version__ = "0.1.0"
