"""KAN-hybrid graph networks, multi-teacher amalgamation, graph-free students."""

__version__ = "0.1.0"
