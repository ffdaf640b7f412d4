"""Hierarchical visual place recognition and registration engine with a
benchmark harness for sequential survey imagery."""

__version__ = "0.1.0"
