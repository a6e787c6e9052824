"""Stabilizability analysis and periodic feedback synthesis for linear T-periodic systems."""

__version__ = "0.1.0"
