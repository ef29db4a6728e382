"""Numerical toolkit for Siegel Poincare series, Bergman kernels and their degree-one
weight-2 counterparts."""

__version__ = "0.1.0"
