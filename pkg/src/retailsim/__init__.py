"""Spatial retail demand model, posterior simulator and allocation policies."""

__version__ = "0.1.0"
