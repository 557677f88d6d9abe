"""Multiscale model reduction for 2D heterogeneous elliptic problems."""

__version__ = "0.1.0"
