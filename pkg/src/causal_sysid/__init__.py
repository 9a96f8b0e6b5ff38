"""Causal-graph-guided system identification for toy simulators."""

__version__ = "0.1.0"
