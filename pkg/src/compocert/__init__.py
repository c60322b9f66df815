"""Checks and experiments for compositional generalization guarantees."""

__version__ = "0.1.0"
