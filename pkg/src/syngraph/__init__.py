"""Syntactic-graph semantic parser: graph construction, graph-to-sequence model and harnesses."""

__version__ = "0.1.0"
