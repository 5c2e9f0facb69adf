"""Endoluminal continuum-instrument simulator and analytic perception library."""

__version__ = "0.1.0"
