"""Continuous-time actor-critic learning for SDE-controlled systems."""

__version__ = "0.1.0"
