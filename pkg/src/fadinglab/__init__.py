"""Rayleigh fading statistics for multi-frequency coherent fiber backscatter."""

__version__ = "0.1.0"
