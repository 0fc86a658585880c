"""Structured-context event boundary detection over frame feature sequences."""

__version__ = "0.1.0"
