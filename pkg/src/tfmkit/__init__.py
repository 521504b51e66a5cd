"""Traction force microscopy: forward elasticity models and regularized reconstruction."""

__version__ = "0.1.0"
