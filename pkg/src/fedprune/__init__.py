"""Federated learning with server-side statistical filter pruning."""

__version__ = "0.1.0"
