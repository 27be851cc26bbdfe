"""Incremental semantic scene-graph mapping from sparse labeled point
sequences: labeled point map maintenance, confidence-based label
association and fusion, entity graph extraction, message-passing scene
graph prediction, and temporal belief fusion."""

__version__ = "0.1.0"
