"""Desk-scale speech anti-spoofing countermeasure workbench."""

__version__ = "0.1.0"
