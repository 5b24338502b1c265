"""Numerical toolkit for complex Hessian equations with Dirichlet data."""

__version__ = "0.1.0"
