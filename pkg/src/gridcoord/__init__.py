"""Distributed coordination of multi-region transmission investment."""

__version__ = "0.1.0"
