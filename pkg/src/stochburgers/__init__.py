"""Simulation and verification toolkit for the spectrally forced stochastic Burgers equation."""

__version__ = "0.1.0"
