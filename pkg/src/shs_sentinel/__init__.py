"""Contingency detection for switched linear power-system models."""

__version__ = "0.1.0"
