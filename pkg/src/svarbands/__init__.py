"""Confidence bands for set-identified sign-restricted structural VARs."""

__version__ = "0.1.0"
