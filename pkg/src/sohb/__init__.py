"""Harmonic-balance computation of sustained oscillations in grid-connected VSCs."""

__version__ = "0.1.0"
