"""Data loaders and storage utilities."""
