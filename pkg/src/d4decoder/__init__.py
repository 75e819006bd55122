"""d4decoder."""

__version__ = "0.1.0"
