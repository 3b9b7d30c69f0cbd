"""Simulation and limit theory for particle systems with rank-based deletion."""

__version__ = "0.1.0"
