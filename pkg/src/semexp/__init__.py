"""Semantic exploration planning and volumetric mapping toolkit."""

__version__ = "0.1.0"
