"""Graph-aware retrieval and evaluation for hierarchical normative documents."""

__version__ = "0.1.0"
