"""Reflected BSDEs along characteristics, optimal stopping and the grid equivalence checks."""
