"""Immersed isogeometric topology optimization driven by topological derivatives."""

__version__ = "0.1.0"
