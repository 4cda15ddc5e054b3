"""Extremes of branching Brownian motion and F-KPP fronts in periodic media."""

__version__ = "0.1.0"
