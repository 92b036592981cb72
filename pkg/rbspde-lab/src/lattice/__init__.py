"""Noise trees, conditional expectations and sampled paths."""
