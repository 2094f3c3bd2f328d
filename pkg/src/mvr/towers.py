"""User and item towers with condition-aware user embedding generation.

Both towers are 2-layer GELU MLPs over their own features; they never
exchange activations before the dot product. The user tower consumes the
profile concatenated with one condition vector per output embedding and
shares all weights across conditions; outputs are unit-normalized. The
condition embedding table for explicit interests (followed topics) lives
here as well, plus a binary checkpoint format for parameter stores.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

import mvr.numcore as nc
from mvr.numcore import ParamStore, Tensor

CHECKPOINT_MAGIC = b"MVR1"
CHECKPOINT_VERSION = 1


class UnknownTopicError(KeyError):
    """Topic id is outside the condition table vocabulary."""


class CheckpointError(IOError):
    """Checkpoint file is corrupt or has an unsupported version."""


@dataclass
class UserFeatures:
    """Dense profile vector plus the user's followed topic ids."""

    profile: np.ndarray
    followed_topics: list[int] = field(default_factory=list)


@dataclass
class UserEmbeddingSet:
    """K unit-norm user vectors with retrieval budgets and per-vector meta.

    ``condition_meta`` holds the centroid importance (implicit) or the topic
    id (explicit) that produced each embedding.
    """

    embeddings: np.ndarray
    budgets: np.ndarray
    source_kind: str
    condition_meta: list

    def validate(self) -> None:
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValueError("user embeddings must be unit-norm")
        if np.any(self.budgets < 0):
            raise ValueError("budgets must be non-negative")


def embed_condition(topic_id: int, table: Tensor) -> Tensor:
    """Row lookup in the condition embedding table; differentiable."""
    vocab = table.data.shape[0]
    if not 0 <= int(topic_id) < vocab:
        raise UnknownTopicError(f"topic id {topic_id} outside vocabulary of {vocab}")
    row = nc.gather_rows(table, np.array([int(topic_id)]))
    return nc.reshape(row, (table.data.shape[1],))


def init_tower_params(
    store: ParamStore,
    prefix: str,
    in_dim: int,
    hidden: int,
    out_dim: int,
    rng: np.random.Generator,
) -> None:
    store.add(f"{prefix}.w1", rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden)))
    store.add(f"{prefix}.b1", np.zeros(hidden))
    store.add(f"{prefix}.w2", rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, out_dim)))
    # small positive bias keeps the pre-normalization output away from zero
    store.add(f"{prefix}.b2", np.full(out_dim, 0.01))


def _crossing_stack(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    h = nc.gelu(nc.add(nc.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    out = nc.add(nc.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    return nc.l2_normalize(out, axis=-1)


def user_tower_tensor(profile: np.ndarray, conditions: Tensor, params: ParamStore) -> Tensor:
    """Unit-norm embedding per condition row; weights shared across rows.

    ``conditions`` may be [K, d_c] or batched [B, K, d_c]; the profile
    ([d_u] or [B, d_u]) is broadcast across the condition rows.
    """
    profile = np.asarray(profile, dtype=np.float64)
    cond_shape = conditions.data.shape
    if profile.ndim == len(cond_shape) - 1 and profile.ndim > 1:
        profile = profile[:, None, :]
    prof = np.broadcast_to(profile, cond_shape[:-1] + (profile.shape[-1],))
    x = nc.concat([nc.constant(prof.copy()), conditions], axis=-1)
    return _crossing_stack(x, params, "user")


def user_tower(
    u: UserFeatures, conditions: Tensor, params: ParamStore, source_kind: str = "implicit"
) -> UserEmbeddingSet:
    """Run the user crossing stack once per condition; budgets are left unset."""
    if conditions.data.ndim != 2 or conditions.data.shape[0] < 1:
        raise nc.DimensionError("conditions must be a [K, d_c] matrix with K >= 1")
    out = user_tower_tensor(u.profile, conditions, params)
    k = out.data.shape[0]
    return UserEmbeddingSet(
        embeddings=out.data.copy(),
        budgets=np.zeros(k, dtype=np.int64),
        source_kind=source_kind,
        condition_meta=[None] * k,
    )


def item_tower_tensor(features, params: ParamStore, item_ids=None) -> Tensor:
    """Unit-norm item embeddings from the item crossing stack.

    Appends the item-id embedding ("item.id_table") to the dense features
    when present; ``features`` is [F] or [M, F].
    """
    x = features if isinstance(features, Tensor) else nc.constant(np.atleast_2d(features))
    if "item.id_table" in params:
        if item_ids is None:
            raise ValueError("item ids required when the id table is present")
        ids = nc.gather_rows(params["item.id_table"], np.atleast_1d(item_ids))
        x = nc.concat([x, ids], axis=-1)
    if x.data.shape[-1] != params["item.w1"].data.shape[0]:
        raise nc.DimensionError(
            f"item tower expects dim {params['item.w1'].data.shape[0]}, got {x.data.shape[-1]}"
        )
    return _crossing_stack(x, params, "item")


def item_tower(features, params: ParamStore, item_ids=None) -> np.ndarray:
    out = item_tower_tensor(features, params, item_ids)
    arr = out.data
    return arr[0] if np.asarray(features).ndim == 1 else arr


# ---------------------------------------------------------------------------
# checkpoint format: magic "MVR1" | version u32 | count u32 | name table with
# per-tensor shapes | raw little-endian float64 blocks in table order.


def save_checkpoint(store: ParamStore, path) -> None:
    names = sorted(store.names())
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            raw = name.encode("utf-8")
            shape = store[name].data.shape
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", len(shape)))
            f.write(struct.pack(f"<{len(shape)}I", *shape))
        for name in names:
            f.write(np.ascontiguousarray(store[name].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> ParamStore:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 12 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    entries = []
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            entries.append((name, shape))
        store = ParamStore()
        for name, shape in entries:
            size = int(np.prod(shape)) if shape else 1
            end = offset + 8 * size
            if end > len(blob):
                raise CheckpointError(f"{path}: truncated tensor data for {name!r}")
            arr = np.frombuffer(blob[offset:end], dtype="<f8").reshape(shape)
            store.add(name, arr.astype(np.float64))
            offset = end
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    if offset != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensor data")
    return store
