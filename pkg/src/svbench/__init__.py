"""Latency-aware streaming classification of grid faults and cyber-attacks on sampled-value data."""

__version__ = "0.1.0"
