"""Visually grounded cross-lingual keyword detection and localisation."""

__version__ = "0.1.0"
