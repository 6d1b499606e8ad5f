"""Simulation and analysis of an energy-harvesting sensor node with a finite
battery and a finite data buffer."""

__version__ = "0.1.0"
