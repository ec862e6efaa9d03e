"""Variational autoregressive samplers for 2D spin systems."""

__version__ = "0.1.0"
