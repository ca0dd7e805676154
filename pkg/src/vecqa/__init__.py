"""vecqa: an embedding-level retrieval-augmented question answering engine.

Retrieval (BM25 and exact dense search), per-query contrastive refinement of
the query embedding, an exploration gate over injected random embeddings, and
entropy-based selection among generated candidate answers.  All language-model
access goes through a small backend contract with deterministic in-process
implementations, so the whole pipeline runs hermetically.
"""

__version__ = "0.1.0"
