"""Glioblastoma prognostic stratification from whole-slide images and clinical data."""

__version__ = "0.1.0"
