"""Symbolic do-calculus engine with exact discrete-model oracles."""

__version__ = "0.1.0"
