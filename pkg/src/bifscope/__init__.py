"""Numerical laboratory for one-parameter dynamical pairs on the Riemann sphere."""
__version__ = "0.1.0"
