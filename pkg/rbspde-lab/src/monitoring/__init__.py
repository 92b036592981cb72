"""Diagnostics journals."""
