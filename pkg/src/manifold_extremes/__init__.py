"""Extremes of locally stationary Gaussian and chi fields on manifolds."""

__version__ = "0.1.0"
