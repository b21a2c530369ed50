"""Knowledge-graph embeddings with relation-aware attention GCNs."""

__version__ = "0.1.0"
