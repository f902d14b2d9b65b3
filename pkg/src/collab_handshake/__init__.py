"""Bandwidth-aware collaborative perception via a learned request/match/connect handshake."""

__version__ = "0.1.0"
