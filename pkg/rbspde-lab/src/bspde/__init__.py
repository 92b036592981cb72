"""Linear backward SPDE solver and its verifiers."""
