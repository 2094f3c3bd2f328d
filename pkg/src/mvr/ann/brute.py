"""Exact top-k inner-product search; the oracle every index is held against."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class IndexedCorpus:
    """Item ids, unit-norm embeddings and topic labels, ready for search."""

    item_ids: np.ndarray
    embeddings: np.ndarray
    topic_labels: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.item_ids = np.asarray(self.item_ids, dtype=np.int64)
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        if not self.topic_labels:
            self.topic_labels = [[] for _ in range(len(self.item_ids))]

    def __len__(self) -> int:
        return len(self.item_ids)

    def validate(self) -> None:
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise ValueError("corpus item ids must be unique")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("corpus embeddings must be unit-norm")

    def labels_of(self, item_id: int) -> set[int]:
        if not hasattr(self, "_label_map"):
            self._label_map = {
                int(i): set(lab) for i, lab in zip(self.item_ids, self.topic_labels)
            }
        return self._label_map[int(item_id)]


def brute_force_topk(
    corpus: IndexedCorpus, query: np.ndarray, k: int
) -> list[tuple[int, float]]:
    """Exact top-k by dot product, ties broken by ascending item id."""
    m = len(corpus)
    if m == 0:
        return []
    if k > m:
        raise ValueError(f"k={k} exceeds corpus size {m}")
    scores = corpus.embeddings @ np.asarray(query, dtype=np.float64)
    order = np.lexsort((corpus.item_ids, -scores))[:k]
    return [(int(corpus.item_ids[i]), float(scores[i])) for i in order]
