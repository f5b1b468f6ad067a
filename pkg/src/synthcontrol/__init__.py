"""Synthetic control estimation with placebo inference and robustness drivers."""

__version__ = "0.1.0"
