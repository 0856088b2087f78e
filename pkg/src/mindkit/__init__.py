"""Adaptive scenario-tree search and contingency planning over Gaussian-mixture predictions."""

__version__ = "0.1.0"
