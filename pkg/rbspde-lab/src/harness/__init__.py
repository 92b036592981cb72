"""Command-line harness: run manifests, experiment commands and plots."""
