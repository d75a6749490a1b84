"""Decoupled UL/DL access with edge computing in two-tier HetNets."""

__version__ = "0.1.0"
