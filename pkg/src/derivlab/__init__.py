"""Derivatives pricing, volatility-surface and optimal-investment toolkit."""

__version__ = "0.1.0"
