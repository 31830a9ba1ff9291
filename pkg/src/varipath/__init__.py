"""Numerical laboratory for path-convexity uniqueness of variational problems."""
