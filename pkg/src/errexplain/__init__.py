"""Simulated pick-and-place failures and natural-language failure explanations."""

__version__ = "0.1.0"
