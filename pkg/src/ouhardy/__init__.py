"""Numerical checks for weighted multipolar Hardy inequalities with Gaussian measure."""

__version__ = "0.1.0"
