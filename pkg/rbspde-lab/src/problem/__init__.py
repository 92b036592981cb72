"""Problem description, expression language and assumption checks."""
