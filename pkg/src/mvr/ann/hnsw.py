"""Layered proximity graph for approximate maximum-inner-product search.

Unit-norm embeddings make inner-product order equivalent to cosine, so no
reduction transform is needed. Level assignment draws from a seeded RNG and
insertion follows corpus order, so builds are deterministic per seed. The
index is immutable after build; queries share it freely across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from mvr.ann.backend import load_backend
from mvr.ann.brute import IndexedCorpus

INDEX_MAGIC = b"MVRIDX"
INDEX_VERSION = 1


class IndexConfigError(ValueError):
    """Query or build parameters violate the index contract."""


class IndexLoadError(IOError):
    """Index file is corrupt, truncated, or version-mismatched."""


@dataclass
class HnswConfig:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.m < 2 or self.ef_construction < 1 or self.ef_search < 1:
            raise IndexConfigError("m >= 2 and positive ef values required")


class _Scratch:
    """Reusable search buffers; one per thread of use."""

    def __init__(self, n: int):
        self.visited = np.zeros(n, dtype=np.int64)
        self.stamp = 0
        self.cand_d = np.empty(n + 1, dtype=np.float64)
        self.cand_i = np.empty(n + 1, dtype=np.int32)

    def next_stamp(self) -> int:
        self.stamp += 1
        return self.stamp


class HnswIndex:
    def __init__(
        self,
        corpus: IndexedCorpus,
        cfg: HnswConfig,
        levels: np.ndarray,
        adjacency: list[np.ndarray],
        degrees: list[np.ndarray],
        entry_point: int,
        backend: str | None = None,
    ):
        self.corpus = corpus
        self.cfg = cfg
        self.levels = levels
        self.adjacency = adjacency
        self.degrees = degrees
        self.entry_point = entry_point
        self._kernels = load_backend(backend)

    @property
    def max_level(self) -> int:
        return len(self.adjacency) - 1

    def _search(self, layer: int, entries: np.ndarray, q: np.ndarray, ef: int, scratch):
        return self._kernels.search_layer(
            self.corpus.embeddings,
            self.adjacency[layer],
            self.degrees[layer],
            entries,
            q,
            ef,
            scratch.visited,
            scratch.next_stamp(),
            scratch.cand_d,
            scratch.cand_i,
        )

    def query(
        self, query: np.ndarray, k: int, ef_search: int | None = None
    ) -> list[tuple[int, float]]:
        """Approximate top-k, sorted by descending score then ascending id."""
        ef = self.cfg.ef_search if ef_search is None else ef_search
        if ef < k:
            raise IndexConfigError(f"ef_search={ef} must be at least k={k}")
        q = np.ascontiguousarray(query, dtype=np.float64)
        scratch = _Scratch(len(self.corpus))
        entries = np.array([self.entry_point], dtype=np.int32)
        for layer in range(self.max_level, 0, -1):
            ids, _ = self._search(layer, entries, q, 1, scratch)
            entries = ids
        ids, dists = self._search(0, entries, q, max(ef, k), scratch)
        ids = ids[:k]
        dists = dists[:k]
        ext = self.corpus.item_ids[ids]
        order = np.lexsort((ext, dists))
        return [(int(ext[i]), float(-dists[i])) for i in order]


def hnsw_build(
    corpus: IndexedCorpus, cfg: HnswConfig, backend: str | None = None
) -> HnswIndex:
    corpus.validate()
    n = len(corpus)
    if n == 0:
        raise IndexConfigError("cannot build an index over an empty corpus")
    kernels = load_backend(backend)
    vectors = np.ascontiguousarray(corpus.embeddings, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    ml = 1.0 / np.log(cfg.m)
    draws = rng.random(n)
    levels = np.floor(-np.log(draws) * ml).astype(np.int32)
    max_level = int(levels.max())
    deg_caps = [2 * cfg.m if layer == 0 else cfg.m for layer in range(max_level + 1)]
    adjacency = [
        np.full((n, deg_caps[layer]), -1, dtype=np.int32) for layer in range(max_level + 1)
    ]
    degrees = [np.zeros(n, dtype=np.int32) for _ in range(max_level + 1)]
    scratch = _Scratch(n)
    entry = 0
    top = int(levels[0])

    for node in range(1, n):
        level = int(levels[node])
        q = vectors[node]
        entries = np.array([entry], dtype=np.int32)
        for layer in range(top, level, -1):
            ids, _ = kernels.search_layer(
                vectors,
                adjacency[layer],
                degrees[layer],
                entries,
                q,
                1,
                scratch.visited,
                scratch.next_stamp(),
                scratch.cand_d,
                scratch.cand_i,
            )
            entries = ids
        for layer in range(min(level, top), -1, -1):
            ids, dists = kernels.search_layer(
                vectors,
                adjacency[layer],
                degrees[layer],
                entries,
                q,
                cfg.ef_construction,
                scratch.visited,
                scratch.next_stamp(),
                scratch.cand_d,
                scratch.cand_i,
            )
            sel = kernels.select_neighbors(vectors, ids, dists, cfg.m)
            kernels.connect_node(
                vectors, adjacency[layer], degrees[layer], node, sel, deg_caps[layer]
            )
            entries = ids
        if level > top:
            entry = node
            top = level

    return HnswIndex(corpus, cfg, levels, adjacency, degrees, entry, backend)


def hnsw_query(index: HnswIndex, query: np.ndarray, k: int, ef_search: int | None = None):
    return index.query(query, k, ef_search)


# ---------------------------------------------------------------------------
# persistence: magic "MVRIDX" | version | m, ef_construction, ef_search, seed
# | d, count, max_level, entry | ids | embeddings | levels | per-layer
# adjacency (u32 degree + i32 neighbors per node) | per-item topic labels.


def index_save(index: HnswIndex, path) -> None:
    corpus = index.corpus
    n, d = corpus.embeddings.shape
    with open(path, "wb") as f:
        f.write(INDEX_MAGIC)
        f.write(
            struct.pack(
                "<IIIIQIIqq",
                INDEX_VERSION,
                index.cfg.m,
                index.cfg.ef_construction,
                index.cfg.ef_search,
                n,
                d,
                index.max_level,
                index.cfg.seed,
                index.entry_point,
            )
        )
        f.write(np.ascontiguousarray(corpus.item_ids, dtype="<i8").tobytes())
        f.write(np.ascontiguousarray(corpus.embeddings, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(index.levels, dtype="<i4").tobytes())
        for layer in range(index.max_level + 1):
            deg = index.degrees[layer]
            adj = index.adjacency[layer]
            for node in range(n):
                k = int(deg[node])
                f.write(struct.pack("<I", k))
                f.write(np.ascontiguousarray(adj[node, :k], dtype="<i4").tobytes())
        for labels in corpus.topic_labels:
            f.write(struct.pack("<I", len(labels)))
            if labels:
                f.write(np.asarray(sorted(labels), dtype="<i4").tobytes())


def index_load(path, backend: str | None = None) -> HnswIndex:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(INDEX_MAGIC) + 4 or blob[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise IndexLoadError(f"{path}: bad magic, not an index file")
    offset = len(INDEX_MAGIC)
    try:
        (version, m, ef_c, ef_s, n, d, max_level, seed, entry) = struct.unpack_from(
            "<IIIIQIIqq", blob, offset
        )
    except struct.error as exc:
        raise IndexLoadError(f"{path}: truncated header ({exc})") from exc
    if version != INDEX_VERSION:
        raise IndexLoadError(
            f"{path}: index version {version} unsupported (expected {INDEX_VERSION})"
        )
    offset += struct.calcsize("<IIIIQIIqq")

    def take(count, dtype, itemsize):
        nonlocal offset
        end = offset + count * itemsize
        if end > len(blob):
            raise IndexLoadError(f"{path}: truncated data section")
        arr = np.frombuffer(blob[offset:end], dtype=dtype)
        offset = end
        return arr

    ids = take(n, "<i8", 8).astype(np.int64)
    embeddings = take(n * d, "<f8", 8).reshape(n, d).astype(np.float64)
    levels = take(n, "<i4", 4).astype(np.int32)
    deg_caps = [2 * m if layer == 0 else m for layer in range(max_level + 1)]
    adjacency = []
    degrees = []
    try:
        for layer in range(max_level + 1):
            adj = np.full((n, deg_caps[layer]), -1, dtype=np.int32)
            deg = np.zeros(n, dtype=np.int32)
            for node in range(n):
                (count,) = struct.unpack_from("<I", blob, offset)
                offset += 4
                if count > deg_caps[layer]:
                    raise IndexLoadError(f"{path}: degree {count} exceeds layer cap")
                adj[node, :count] = take(count, "<i4", 4)
                deg[node] = count
            adjacency.append(adj)
            degrees.append(deg)
        labels = []
        for _ in range(n):
            (count,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            labels.append([int(x) for x in take(count, "<i4", 4)])
    except struct.error as exc:
        raise IndexLoadError(f"{path}: truncated adjacency section ({exc})") from exc
    if offset != len(blob):
        raise IndexLoadError(f"{path}: trailing bytes after index data")
    corpus = IndexedCorpus(ids, embeddings, labels)
    cfg = HnswConfig(m=m, ef_construction=ef_c, ef_search=ef_s, seed=seed)
    return HnswIndex(corpus, cfg, levels, adjacency, degrees, int(entry), backend)
