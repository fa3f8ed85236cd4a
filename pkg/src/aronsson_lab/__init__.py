"""Numerical laboratory for Aronsson's equation with quadratic anisotropic Hamiltonians."""

__version__ = "0.1.0"
