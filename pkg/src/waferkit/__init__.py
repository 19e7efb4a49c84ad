"""Desk-scale operating stack for a wafer-scale accelerated neuromorphic system."""

__version__ = "0.1.0"
