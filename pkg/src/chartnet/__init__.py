"""Synthetic chart question answering with a MAC-style reasoning network."""

__version__ = "0.1.0"
