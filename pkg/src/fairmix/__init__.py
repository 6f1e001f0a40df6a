"""Combine real and generated data to approximate a fair target distribution."""

__version__ = "0.1.0"
