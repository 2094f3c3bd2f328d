"""Multi-embedding retrieval engine.

Users are represented by several unit-norm embeddings, each conditioned on
one interest: implicit interests mined from the engagement sequence by a
differentiable clustering module, and explicit interests taken from followed
topics via a learned condition embedding table. Retrieval fetches candidates
per embedding from an inner-product ANN index under per-embedding budgets and
merges them round-robin with deduplication.
"""

__version__ = "0.1.0"
