"""Density-based topology optimization with adaptive element removal."""

__version__ = "0.1.0"
