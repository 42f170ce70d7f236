"""Bayesian optimisation with transformer surrogates trained on GP-prior data."""

__version__ = "0.1.0"
