"""Steepest descent under matrix-induced norms, with learning/forgetting diagnostics."""

__version__ = "0.1.0"
