"""Implicit interest condition construction from the engagement sequence.

Four condition constructors are provided: routed clustering with
validity-aware farthest-point initialization and single-assignment routing
(the deployed configuration, mode ``dcm``), classic capsule-style routing
with Gaussian init, soft assignment and a shared bilinear map (mode
``mind``), multi-head self-attention (mode ``self_attention``), and
learnable query tokens with cross-attention (mode ``interest_token``).

The iterative routing runs on detached values; gradients reach parameters
only through the item embeddings inside the final routing pass and its
weighted sums. Argmax masks, validity masks and farthest-point selections
are non-differentiable selectors throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

import mvr.numcore as nc
from mvr.numcore import ParamStore, Tensor

DEFAULT_MAX_SEQ_LEN = 128


class EmptySequenceError(ValueError):
    """The operation needs at least one valid sequence item."""


class UndefinedMetricError(ValueError):
    """The metric is undefined for the given input (e.g. fewer than 2 vectors)."""


# ---------------------------------------------------------------------------
# domain types


@dataclass
class EngagementSequence:
    """A user's ordered engaged items with per-item features and validity.

    ``features`` holds the concatenated fixed-dimension feature vectors per
    item (zero-filled when missing); ``valid`` is False whenever a feature was
    missing or the action was negative.
    """

    item_ids: np.ndarray
    features: np.ndarray
    action_signs: np.ndarray
    timestamps: np.ndarray
    valid: np.ndarray

    @classmethod
    def build(cls, item_ids, features, action_signs, timestamps, missing=None):
        item_ids = np.asarray(item_ids, dtype=np.int64)
        features = np.array(features, dtype=np.float64)
        action_signs = np.asarray(action_signs, dtype=np.int64)
        timestamps = np.asarray(timestamps, dtype=np.float64)
        if missing is None:
            missing = np.zeros(len(item_ids), dtype=bool)
        missing = np.asarray(missing, dtype=bool)
        features[missing] = 0.0
        valid = (~missing) & (action_signs > 0)
        return cls(item_ids, features, action_signs, timestamps, valid)

    def __len__(self) -> int:
        return len(self.item_ids)

    def validate(self, max_seq_len: int = DEFAULT_MAX_SEQ_LEN) -> None:
        if len(self) > max_seq_len:
            raise ValueError(f"sequence length {len(self)} exceeds max {max_seq_len}")
        if len(self) > 1 and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be non-decreasing")
        if np.any(self.valid & (self.action_signs < 0)):
            raise ValueError("negative-action items must be invalid")


@dataclass
class ItemEmbeddingMatrix:
    """One embedding row per sequence item plus the validity mask."""

    embeddings: Tensor
    validity_mask: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.embeddings.data

    def __post_init__(self):
        if self.embeddings.data.shape[0] != len(self.validity_mask):
            raise ValueError("embedding row count must equal mask length")


@dataclass
class RoutingState:
    """Detached constants of one routing forward pass.

    The iterated centroids and the selector mask (validity times argmax
    one-hots under single assignment) are not differentiated through; freezing
    them makes the remaining computation a plain differentiable function, which
    is what finite-difference checks verify.
    """

    centroids: np.ndarray
    mask: np.ndarray


@dataclass
class CentroidSet:
    """Cluster centroids with per-centroid importances and routing weights."""

    centroids: Tensor
    importances: np.ndarray
    routing_weights: np.ndarray
    state: RoutingState | None = None

    @property
    def values(self) -> np.ndarray:
        return self.centroids.data


@dataclass
class InterestModelConfig:
    mode: str = "dcm"
    k_im: int = 7
    routing_steps: int = 3
    use_vafpi: bool | None = None
    use_sar: bool | None = None
    dim: int = 64
    heads: int = 4
    gaussian_scale: float = 0.1

    def __post_init__(self):
        if self.mode not in ("dcm", "mind", "self_attention", "interest_token"):
            raise ValueError(f"unknown interest mode: {self.mode!r}")
        if self.k_im < 1 or self.routing_steps < 1 or self.dim < 1 or self.heads < 1:
            raise ValueError("k_im, routing_steps, dim and heads must be positive")
        # The canonical routed modes pin their toggles; explicit overrides are
        # allowed for dcm-family ablation cells but mind is the fixed baseline.
        if self.use_vafpi is None:
            self.use_vafpi = self.mode == "dcm"
        if self.use_sar is None:
            self.use_sar = self.mode == "dcm"
        if self.mode == "mind" and (self.use_vafpi or self.use_sar):
            raise ValueError("mind mode uses Gaussian init and soft routing")

    @property
    def uses_bilinear(self) -> bool:
        return self.mode == "mind"

    @property
    def num_conditions(self) -> int:
        return self.heads if self.mode == "self_attention" else self.k_im


# ---------------------------------------------------------------------------
# numpy helpers shared by the detached routing iterations


def _softmax_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _squash_np(x: np.ndarray, axis: int = -1) -> np.ndarray:
    sq = (x * x).sum(axis=axis, keepdims=True)
    return x * (np.sqrt(sq) / (1.0 + sq))


def _argmax_mask(soft: np.ndarray) -> np.ndarray:
    """One-hot mask at the per-row argmax (ties broken by lowest index)."""
    k = soft.shape[-1]
    idx = soft.argmax(axis=-1)
    return np.eye(k)[idx]


# ---------------------------------------------------------------------------
# operations


def summarize_items(seq: EngagementSequence, params: ParamStore) -> ItemEmbeddingMatrix:
    """Per-item embeddings from a 2-layer MLP over the concatenated features.

    When the params carry an item-id embedding table (``summarize.id_table``)
    the id embedding is appended to the dense features before the MLP.
    Differentiable w.r.t. the MLP weights and the id table.
    """
    e = _summarize_tensor(
        nc.constant(seq.features[None, :, :]), seq.item_ids[None, :], params
    )
    return ItemEmbeddingMatrix(nc.reshape(e, e.data.shape[1:]), seq.valid.copy())


def _summarize_tensor(features: Tensor, item_ids: np.ndarray, params: ParamStore) -> Tensor:
    w1 = params["summarize.w1"]
    w2 = params["summarize.w2"]
    x = features
    if "summarize.id_table" in params:
        ids = nc.gather_rows(params["summarize.id_table"], item_ids)
        x = nc.concat([x, ids], axis=-1)
    if x.data.shape[-1] != w1.data.shape[0]:
        raise nc.DimensionError(
            f"summarizer expects feature dim {w1.data.shape[0]}, got {x.data.shape[-1]}"
        )
    return nc.matmul(nc.gelu(nc.matmul(x, w1)), w2)


def vafpi_init(items: ItemEmbeddingMatrix, k: int, rng: np.random.Generator) -> np.ndarray:
    """Farthest-point centroid seeding restricted to valid items.

    The first centroid is a uniformly random valid item; each subsequent pick
    minimizes, over valid items, the maximum similarity to the centroids
    chosen so far (ties by lowest index). Invalid items are never selected.
    """
    e = items.values
    valid_idx = np.flatnonzero(items.validity_mask)
    if valid_idx.size == 0:
        raise EmptySequenceError("farthest-point init needs at least one valid item")
    first = int(rng.choice(valid_idx))
    chosen = [first]
    for _ in range(1, k):
        sims = e[valid_idx] @ e[chosen].T
        max_sims = sims.max(axis=1)
        chosen.append(int(valid_idx[np.argmin(max_sims)]))
    return e[chosen].copy()


def route_soft(
    items: ItemEmbeddingMatrix,
    centroids: np.ndarray,
    bilinear: np.ndarray | None = None,
) -> np.ndarray:
    """Soft routing weights: per-item softmax over centroid similarities.

    Rows of valid items sum to one; invalid items get all-zero rows.
    """
    e = items.values if isinstance(items, ItemEmbeddingMatrix) else np.asarray(items)
    mapped = e @ bilinear.T if bilinear is not None else e
    weights = _softmax_np(mapped @ centroids.T, axis=-1)
    weights[~items.validity_mask] = 0.0
    return weights


def route_single_assignment(
    items: ItemEmbeddingMatrix, centroids: np.ndarray
) -> np.ndarray:
    """Soft routing with all non-argmax entries zeroed, without renormalizing.

    The surviving entry equals the soft softmax value exactly, so row sums are
    below one in general. Argmax ties break to the lowest centroid index;
    invalid items get all-zero rows.
    """
    e = items.values
    soft = _softmax_np(e @ centroids.T, axis=-1)
    weights = soft * _argmax_mask(soft)
    weights[~items.validity_mask] = 0.0
    return weights


def update_centroids(
    weights: np.ndarray,
    items: ItemEmbeddingMatrix,
    bilinear: np.ndarray | None = None,
) -> np.ndarray:
    """Squashed weighted sums of the (optionally bilinear-mapped) items."""
    e = items.values
    mapped = e @ bilinear.T if bilinear is not None else e
    return _squash_np(weights.T @ mapped)


def run_dcm(
    seq: EngagementSequence,
    cfg: InterestModelConfig,
    params: ParamStore,
    rng: np.random.Generator,
    state: RoutingState | None = None,
) -> CentroidSet:
    """Summarize, seed, route for ``routing_steps`` rounds, then emit the
    final differentiable routing pass (weights, importances, centroids).

    Passing a previously captured ``state`` skips the detached iterations and
    reuses its constants; gradient checks rely on this to perturb only the
    differentiable part.
    """
    items = summarize_items(seq, params)
    e = nc.reshape(items.embeddings, (1,) + items.embeddings.data.shape)
    cents, importances, weights, state = _routed_conditions_batch(
        e, items.validity_mask[None, :], cfg, params, rng, state
    )
    return CentroidSet(
        nc.reshape(cents, cents.data.shape[1:]), importances[0], weights[0], state
    )


def _init_centroids_batch(
    e: np.ndarray, valid: np.ndarray, cfg: InterestModelConfig, rng: np.random.Generator
) -> np.ndarray:
    bsz, seq_len, dim = e.shape
    k = cfg.k_im
    if not cfg.use_vafpi:
        return rng.normal(0.0, cfg.gaussian_scale, size=(bsz, k, dim))
    counts = valid.sum(axis=1)
    if np.any(counts == 0):
        raise EmptySequenceError("farthest-point init needs at least one valid item")
    cents = np.zeros((bsz, k, dim))
    for b in range(bsz):
        cents[b, 0] = e[b, rng.choice(np.flatnonzero(valid[b]))]
    rows = np.arange(bsz)
    for m in range(1, k):
        sims = np.einsum("bld,bmd->blm", e, cents[:, :m])
        max_sims = sims.max(axis=2)
        max_sims[~valid] = np.inf
        cents[:, m] = e[rows, max_sims.argmin(axis=1)]
    return cents


def _routed_conditions_batch(
    e: Tensor,
    valid: np.ndarray,
    cfg: InterestModelConfig,
    params: ParamStore,
    rng: np.random.Generator,
    state: RoutingState | None = None,
) -> tuple[Tensor, np.ndarray, np.ndarray, RoutingState]:
    """Batched routing over padded sequences.

    Returns (centroids [B,K,d] tensor, importances [B,K], weights [B,L,K],
    routing state). Iterations run on detached values; the final pass is
    built on the tape against the state's constants.
    """
    bilinear = params["routing.bilinear"] if cfg.uses_bilinear else None
    valid_f = valid.astype(np.float64)[:, :, None]

    if state is None:
        e_raw = e.data
        mapped_raw = e_raw @ bilinear.data.T if bilinear is not None else e_raw
        cents = _init_centroids_batch(e_raw, valid, cfg, rng)
        for _ in range(cfg.routing_steps):
            logits = np.einsum("bld,bkd->blk", mapped_raw, cents)
            soft = _softmax_np(logits, axis=-1)
            if cfg.use_sar:
                soft = soft * _argmax_mask(soft)
            soft = soft * valid_f
            cents = _squash_np(np.einsum("blk,bld->bkd", soft, mapped_raw))
        mask = valid_f
        if cfg.use_sar:
            final_soft = _softmax_np(
                np.einsum("bld,bkd->blk", mapped_raw, cents), axis=-1
            )
            mask = mask * _argmax_mask(final_soft)
        state = RoutingState(centroids=cents, mask=mask)

    # Final pass: the converged centroids act as constants; gradients flow
    # through the item embeddings inside the softmax and the weighted sums.
    mapped = nc.matmul(e, nc.transpose_last(bilinear)) if bilinear is not None else e
    logits_t = nc.matmul(mapped, nc.constant(state.centroids.swapaxes(1, 2)))
    soft_t = nc.softmax(logits_t, axis=-1)
    weights_t = nc.mul(soft_t, nc.constant(state.mask))
    cents_t = nc.squash(nc.matmul(nc.transpose_last(weights_t), mapped), axis=-1)
    importances = weights_t.data.sum(axis=1)
    return cents_t, importances, weights_t.data, state


def self_attention_conditions(
    seq: EngagementSequence, params: ParamStore, heads: int
) -> Tensor:
    items = summarize_items(seq, params)
    e = nc.reshape(items.embeddings, (1,) + items.embeddings.data.shape)
    out = _self_attention_batch(e, params, heads)
    return nc.reshape(out, out.data.shape[1:])


def _self_attention_batch(
    e: Tensor, params: ParamStore, heads: int, pad_mask: np.ndarray | None = None
) -> Tensor:
    """Mean-pooled per-head self-attention outputs: [B, H, d] conditions.

    ``pad_mask`` (True = real item) excludes padding from both the attention
    targets and the pooling; sequences have no positional encoding, so the
    pooled conditions are permutation invariant.
    """
    conds = []
    bsz, seq_len, dim = e.data.shape
    if pad_mask is None:
        pad_mask = np.ones((bsz, seq_len), dtype=bool)
    attn_bias = nc.constant(np.where(pad_mask, 0.0, -1e30)[:, None, :])
    pool = pad_mask.astype(np.float64)
    pool = pool / pool.sum(axis=1, keepdims=True)
    for h in range(heads):
        wq = params[f"attn.h{h}.wq"]
        wk = params[f"attn.h{h}.wk"]
        wv = params[f"attn.h{h}.wv"]
        scale = 1.0 / np.sqrt(wq.data.shape[1])
        q = nc.matmul(e, wq)
        k = nc.matmul(e, wk)
        v = nc.matmul(e, wv)
        logits = nc.add(nc.mul(nc.matmul(q, nc.transpose_last(k)), nc.constant(scale)), attn_bias)
        out = nc.matmul(nc.softmax(logits), v)
        pooled = nc.matmul(nc.constant(pool[:, None, :]), out)
        conds.append(pooled)
    return nc.concat(conds, axis=1) if len(conds) > 1 else conds[0]


def interest_token_conditions(
    seq: EngagementSequence, tokens: Tensor, params: ParamStore
) -> Tensor:
    items = summarize_items(seq, params)
    e = nc.reshape(items.embeddings, (1,) + items.embeddings.data.shape)
    out = _interest_token_batch(e, tokens, params)
    return nc.reshape(out, out.data.shape[1:])


def _interest_token_batch(
    e: Tensor, tokens: Tensor, params: ParamStore, pad_mask: np.ndarray | None = None
) -> Tensor:
    """Single-head cross-attention of learnable tokens over the sequence."""
    wq = params["attn.wq"]
    wk = params["attn.wk"]
    wv = params["attn.wv"]
    scale = 1.0 / np.sqrt(wq.data.shape[1])
    q = nc.matmul(tokens, wq)
    k = nc.matmul(e, wk)
    v = nc.matmul(e, wv)
    logits = nc.mul(nc.matmul(q, nc.transpose_last(k)), nc.constant(scale))
    if pad_mask is not None:
        logits = nc.add(logits, nc.constant(np.where(pad_mask, 0.0, -1e30)[:, None, :]))
    return nc.matmul(nc.softmax(logits), v)


def centroid_divergence(centroids) -> float:
    """Mean pairwise cosine similarity of the (unit-normalized) centroids.

    Lower means more diverse. Centroids with (near-)zero norm carry no
    retrieval mass and are excluded; when fewer than two survive, the set has
    collapsed onto a single direction and the metric saturates at 1.0.
    """
    c = centroids.data if isinstance(centroids, Tensor) else np.asarray(centroids)
    if c.ndim != 2 or c.shape[0] < 2:
        raise UndefinedMetricError("divergence needs at least two centroids")
    norms = np.linalg.norm(c, axis=1)
    c = c[norms > 1e-12]
    if c.shape[0] < 2:
        return 1.0
    unit = c / np.linalg.norm(c, axis=1, keepdims=True)
    sims = unit @ unit.T
    iu = np.triu_indices(len(unit), k=1)
    return float(sims[iu].mean())


def init_interest_params(
    store: ParamStore,
    cfg: InterestModelConfig,
    feature_dim: int,
    hidden: int,
    rng: np.random.Generator,
    num_items: int = 0,
    id_dim: int = 0,
) -> None:
    """Register the summarizer and mode-specific parameters."""
    in_dim = feature_dim + (id_dim if num_items > 0 else 0)
    store.add("summarize.w1", rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden)))
    store.add("summarize.w2", rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, cfg.dim)))
    if num_items > 0 and id_dim > 0:
        store.add("summarize.id_table", rng.normal(0.0, 0.1, (num_items, id_dim)))
    if cfg.uses_bilinear:
        store.add("routing.bilinear", np.eye(cfg.dim) + rng.normal(0.0, 0.01, (cfg.dim, cfg.dim)))
    if cfg.mode == "self_attention":
        for h in range(cfg.heads):
            for w in ("wq", "wk", "wv"):
                store.add(
                    f"attn.h{h}.{w}",
                    rng.normal(0.0, 1.0 / np.sqrt(cfg.dim), (cfg.dim, cfg.dim)),
                )
    if cfg.mode == "interest_token":
        store.add("tokens", rng.normal(0.0, 0.1, (cfg.k_im, cfg.dim)))
        for w in ("wq", "wk", "wv"):
            store.add(
                f"attn.{w}", rng.normal(0.0, 1.0 / np.sqrt(cfg.dim), (cfg.dim, cfg.dim))
            )
