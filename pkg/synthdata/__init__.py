"""Synthetic concept-annotated datasets and their on-disk format."""
