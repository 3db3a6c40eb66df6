"""Frozen-transformer hidden-state extraction into the embedding-store format."""

__version__ = "0.1.0"
