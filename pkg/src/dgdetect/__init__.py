"""Doppelgänger detection from differences of deep face embeddings."""

__version__ = "0.1.0"
