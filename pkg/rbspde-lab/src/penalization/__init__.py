"""Penalized obstacle solves, the reflecting measure and its checks."""
