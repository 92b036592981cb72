"""Spatial grids, difference operators and implicit solves."""
