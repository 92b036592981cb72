"""Quasilinear reflected solves by θ-continuation."""
