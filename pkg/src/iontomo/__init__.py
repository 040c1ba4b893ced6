"""Simulation and maximum-likelihood process tomography of a transported two-qubit ion gate."""

__version__ = "0.1.0"
