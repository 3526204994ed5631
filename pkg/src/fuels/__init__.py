"""Prototype-based personalized federated learning for traffic forecasting."""

__version__ = "0.1.0"
