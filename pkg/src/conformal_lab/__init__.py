"""Numerical laboratory for conformally invariant variational problems in two dimensions."""

__version__ = "0.1.0"
