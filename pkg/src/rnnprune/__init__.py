"""Spectral pruning of recurrent networks, with baselines and bound evaluators."""

__version__ = "0.1.0"
