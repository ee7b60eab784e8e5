"""Operator splitting solver for the fractional kinetic Fokker-Planck equation."""

__version__ = "0.1.0"
