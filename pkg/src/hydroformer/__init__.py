"""Sparse-attention Transformer forecasting toolkit with Shapley explanations."""

__version__ = "0.1.0"
