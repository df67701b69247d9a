"""Toxic-to-civil text style transfer toolkit."""

__version__ = "0.1.0"
