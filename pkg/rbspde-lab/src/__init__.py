"""Reflected backward SPDE solver and verification lab."""
