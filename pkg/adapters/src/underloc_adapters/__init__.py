"""Producers for the place-recognition engine: run models over image
directories and emit the binary interchange formats the engine loads."""

__version__ = "0.1.0"
