"""Measuring distributional symmetry breaking and its effect on invariant estimators."""

__version__ = "0.1.0"
