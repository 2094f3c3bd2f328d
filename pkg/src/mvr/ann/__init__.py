"""Maximum-inner-product candidate search: exact oracle and HNSW graph."""

from mvr.ann.backend import available_backends, default_backend
from mvr.ann.brute import IndexedCorpus, brute_force_topk
from mvr.ann.hnsw import (
    HnswConfig,
    HnswIndex,
    IndexConfigError,
    IndexLoadError,
    hnsw_build,
    hnsw_query,
    index_load,
    index_save,
)

__all__ = [
    "HnswConfig",
    "HnswIndex",
    "IndexConfigError",
    "IndexLoadError",
    "IndexedCorpus",
    "available_backends",
    "brute_force_topk",
    "default_backend",
    "hnsw_build",
    "hnsw_query",
    "index_load",
    "index_save",
]
