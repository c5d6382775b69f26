"""Sparse landmark maps and incremental camera localization against them."""

__version__ = "0.1.0"
