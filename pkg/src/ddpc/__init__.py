"""Adaptive data-driven prediction and a hierarchical frequency-regulation stack."""

__version__ = "0.1.0"
