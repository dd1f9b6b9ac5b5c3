"""Amplitude-equation numerics for SPDEs driven by additive fractional noise."""

__version__ = "0.1.0"
