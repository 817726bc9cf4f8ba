"""Simulation and analysis of sequential time-bin entangled photon pairs."""

__version__ = "0.1.0"
