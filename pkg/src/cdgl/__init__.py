"""Proof checking and strategy execution for constructive differential games."""

__version__ = "0.1.0"
