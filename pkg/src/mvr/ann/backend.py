"""Kernel backend selection for the graph search hot loops.

The numba JIT path is the default; setting ``MVR_NO_NUMBA=1`` (or numba
failing to import) selects the pure-numpy fallback. Both backends expose the
same kernel trio (search_layer, select_neighbors, connect_node) with
identical tie-breaking semantics, so indexes behave the same way; see
benchmarks/bench_ann.py for the speed comparison.
"""

from __future__ import annotations

import importlib
import logging
import os

logger = logging.getLogger(__name__)

_DISABLE_FLAG = "MVR_NO_NUMBA"


def _numba_disabled() -> bool:
    return os.environ.get(_DISABLE_FLAG, "").strip().lower() in ("1", "true", "yes")


def available_backends() -> list[str]:
    names = ["numpy"]
    try:
        importlib.import_module("numba")
        names.insert(0, "numba")
    except ImportError:
        pass
    return names


def default_backend() -> str:
    if _numba_disabled():
        return "numpy"
    return "numba" if "numba" in available_backends() else "numpy"


def load_backend(name: str | None = None):
    """Return the kernel module for ``name`` (or the resolved default)."""
    name = name or default_backend()
    if name == "numba":
        try:
            return importlib.import_module("mvr.ann.kernels_nb")
        except ImportError as exc:
            logger.warning("numba backend unavailable (%s); using numpy", exc)
            return importlib.import_module("mvr.ann.kernels_np")
    if name == "numpy":
        return importlib.import_module("mvr.ann.kernels_np")
    raise ValueError(f"unknown kernel backend: {name!r}")
