"""Measurement-conditioned body mesh generation, skinning and registration."""

__version__ = "0.1.0"
