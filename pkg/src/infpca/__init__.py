"""Functional PCA for longitudinal data with informative observation times."""

__version__ = "0.1.0"
