"""Streaming fixed-point message-passing GNN inference and pipeline simulation."""

__version__ = "0.1.0"
