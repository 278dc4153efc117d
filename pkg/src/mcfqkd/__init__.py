"""Multicore-fiber high-dimensional QKD simulator."""

__version__ = "0.1.0"
