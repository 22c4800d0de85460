"""Retrieval-augmented captioning of synthetic audio at desk scale."""

__version__ = "0.1.0"
