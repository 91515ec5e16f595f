"""Bounds and estimates for the topological entropy of time-varying and
interconnected ODE systems."""

__version__ = "0.1.0"
