"""Simulation and verification toolkit for quantile asymptotics of dependent sequences."""

__version__ = "0.1.0"
