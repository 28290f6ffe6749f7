"""Compact fourth-order gas-kinetic finite-volume solver on triangular meshes."""

__version__ = "0.1.0"
