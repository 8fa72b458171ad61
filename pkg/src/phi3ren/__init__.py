"""Perturbative renormalization tools for the stochastic cubic heat equation."""

__version__ = "0.1.0"

__all__ = ["terms", "canon", "contraction", "scaling", "graphs", "kernels", "mc", "cli"]
