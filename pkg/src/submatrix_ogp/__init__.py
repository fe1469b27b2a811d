"""Numerical laboratory for planted principal-submatrix recovery in GOE noise."""

__version__ = "0.1.0"
