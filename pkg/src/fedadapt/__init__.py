"""Desk-scale federated learning simulator with local adaptation."""

__version__ = "0.1.0"
