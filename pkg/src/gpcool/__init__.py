"""Gaussian-process MPC for a three-zone forced-air cooling plant."""

__version__ = "0.1.0"
