"""Numerical laboratory for the dynamical sine-Gordon model on the 2-torus."""
from ._accel import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
