"""Stochastic neural field: exact simulation, mean-field models and event analysis."""

__version__ = "0.1.0"
