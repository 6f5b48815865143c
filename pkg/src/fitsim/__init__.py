"""Simulation and analysis of a fitness-driven birth-death population with
size-proportional inheritance."""

__version__ = "0.1.0"
