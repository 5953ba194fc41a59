"""Singular circle-valued harmonic maps with line singularities on flat tori and in R^3."""

__version__ = "0.1.0"
