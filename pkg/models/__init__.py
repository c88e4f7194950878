"""Concept schema, attention, concept graph, the diagnosis model and its losses."""
