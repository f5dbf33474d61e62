"""Smoothed online combinatorial optimization with imperfect predictions."""

__version__ = "0.1.0"
