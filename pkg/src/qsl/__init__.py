"""Berezin-Toeplitz quantization lab on the two-sphere."""

__version__ = "0.1.0"
