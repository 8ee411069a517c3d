"""Numerics for Dirac delta-shell interactions and squeezed-potential limits."""

__version__ = "0.1.0"
