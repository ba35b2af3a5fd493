"""Multilevel Picard approximations of semilinear BSDEs on nested time grids."""

__version__ = "0.1.0"
