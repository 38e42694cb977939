"""Shared-fiber sensing + coherent transmission physical-layer simulator."""

__version__ = "0.1.0"
