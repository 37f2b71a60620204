"""Numerical laboratory for the index theory of one-dimensional quantum cellular automata."""

from __future__ import annotations

__version__ = "0.1.0"
