"""Trainable retrieval models: implicit (sequence-conditioned) and explicit
(topic-conditioned). Both share the trainer and the loss; they are separate
parameter sets trained on their respective datasets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

import mvr.numcore as nc
from mvr.interest import (
    EngagementSequence,
    InterestModelConfig,
    _interest_token_batch,
    _routed_conditions_batch,
    _self_attention_batch,
    _summarize_tensor,
    init_interest_params,
)
from mvr.numcore import ParamStore, Tensor
from mvr.towers import (
    UserEmbeddingSet,
    UserFeatures,
    init_tower_params,
    item_tower_tensor,
    load_checkpoint,
    user_tower_tensor,
)
from mvr.training import TrainerConfig, TrainingExample, sampled_softmax_loss


@dataclass
class ModelConfig:
    dim: int = 64
    hidden: int = 256
    summarize_hidden: int = 64
    profile_dim: int = 8
    item_feature_dim: int = 64
    id_dim: int = 16
    num_items: int = 0
    num_topics: int = 0
    max_seq_len: int = 128
    interest: InterestModelConfig = field(default_factory=InterestModelConfig)

    def __post_init__(self):
        if isinstance(self.interest, dict):
            self.interest = InterestModelConfig(**self.interest)
        if self.interest.dim != self.dim:
            self.interest.dim = self.dim


def _pad_batch(batch: list[TrainingExample], max_seq_len: int):
    """Pad variable-length sequences into dense arrays plus masks."""
    bsz = len(batch)
    lengths = [min(len(ex.seq), max_seq_len) for ex in batch]
    cap = max(max(lengths), 1)
    feat_dim = batch[0].seq.features.shape[1] if len(batch[0].seq) else None
    if feat_dim is None:
        feat_dim = next(
            (ex.seq.features.shape[1] for ex in batch if len(ex.seq)), 1
        )
    feats = np.zeros((bsz, cap, feat_dim))
    ids = np.zeros((bsz, cap), dtype=np.int64)
    valid = np.zeros((bsz, cap), dtype=bool)
    pad = np.zeros((bsz, cap), dtype=bool)
    for i, ex in enumerate(batch):
        n = lengths[i]
        if n == 0:
            continue
        feats[i, :n] = ex.seq.features[-n:]
        ids[i, :n] = ex.seq.item_ids[-n:]
        valid[i, :n] = ex.seq.valid[-n:]
        pad[i, :n] = True
    return feats, ids, valid, pad


class ImplicitModel:
    """Multi-embedding model conditioned on interests mined from the sequence."""

    kind = "implicit"

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: ParamStore | None = None):
        self.cfg = cfg
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(seed)
        store = ParamStore()
        init_interest_params(
            store,
            cfg.interest,
            cfg.item_feature_dim,
            cfg.summarize_hidden,
            rng,
            num_items=cfg.num_items,
            id_dim=cfg.id_dim,
        )
        init_tower_params(store, "user", cfg.profile_dim + cfg.dim, cfg.hidden, cfg.dim, rng)
        init_tower_params(
            store, "item", cfg.item_feature_dim + cfg.id_dim, cfg.hidden, cfg.dim, rng
        )
        if cfg.num_items > 0:
            store.add("item.id_table", rng.normal(0.0, 0.1, (cfg.num_items, cfg.id_dim)))
        self.params = store

    @classmethod
    def from_checkpoint(cls, cfg: ModelConfig, path) -> "ImplicitModel":
        return cls(cfg, params=load_checkpoint(path))

    def trainable(self, ex: TrainingExample) -> bool:
        """Whether the example can drive this model's forward pass."""
        if self.cfg.interest.mode in ("dcm", "mind"):
            return bool(np.any(ex.seq.valid))
        return len(ex.seq) > 0

    def _conditions(self, feats, ids, valid, pad, rng, capture=None):
        e = _summarize_tensor(nc.constant(feats), ids, self.params)
        mode = self.cfg.interest.mode
        if mode in ("dcm", "mind"):
            state = capture.get("routing_state") if capture is not None else None
            cents, importances, _, state = _routed_conditions_batch(
                e, valid, self.cfg.interest, self.params, rng, state
            )
            if capture is not None:
                capture["routing_state"] = state
            return cents, importances
        if mode == "self_attention":
            conds = _self_attention_batch(e, self.params, self.cfg.interest.heads, pad)
        else:
            conds = _interest_token_batch(e, self.params["tokens"], self.params, pad)
        ones = np.ones(conds.data.shape[:2])
        return conds, ones

    def batch_loss(self, batch, freq, tcfg: TrainerConfig, rng, capture=None) -> Tensor:
        feats, ids, valid, pad = _pad_batch(batch, self.cfg.max_seq_len)
        conds, _ = self._conditions(feats, ids, valid, pad, rng, capture)
        profiles = np.stack([ex.user.profile for ex in batch])
        user_embs = user_tower_tensor(profiles, conds, self.params)
        target_feats = np.stack([ex.item_features for ex in batch])
        target_ids = np.array([ex.item_id for ex in batch])
        item_embs = item_tower_tensor(target_feats, self.params, target_ids)
        p_hat = freq.estimate_all(target_ids)
        noise = capture.get("gumbel_noise") if capture is not None else None
        if tcfg.association == "gumbel_st" and noise is None:
            noise = rng.gumbel(size=(len(batch), conds.data.shape[1]))
            if capture is not None:
                capture["gumbel_noise"] = noise
        loss, _ = sampled_softmax_loss(
            user_embs, item_embs, p_hat, tcfg, target_ids, rng, gumbel_noise=noise
        )
        return loss

    # -- inference --------------------------------------------------------

    def user_embedding_set(
        self, user: UserFeatures, seq: EngagementSequence, rng
    ) -> UserEmbeddingSet:
        ex = TrainingExample(user, seq, 0, np.zeros(self.cfg.item_feature_dim))
        feats, ids, valid, pad = _pad_batch([ex], self.cfg.max_seq_len)
        conds, importances = self._conditions(feats, ids, valid, pad, rng)
        embs = user_tower_tensor(user.profile, conds, self.params).data[0]
        return UserEmbeddingSet(
            embeddings=embs,
            budgets=np.zeros(embs.shape[0], dtype=np.int64),
            source_kind="implicit",
            condition_meta=list(importances[0]),
        )

    def item_embeddings(self, features: np.ndarray, item_ids, chunk: int = 8192) -> np.ndarray:
        out = np.empty((len(features), self.cfg.dim))
        for lo in range(0, len(features), chunk):
            hi = min(lo + chunk, len(features))
            out[lo:hi] = item_tower_tensor(
                features[lo:hi], self.params, np.asarray(item_ids)[lo:hi]
            ).data
        return out


class ExplicitModel:
    """Single-condition model keyed by explicit topics from logging time."""

    kind = "explicit"

    def __init__(self, cfg: ModelConfig, seed: int = 0, params: ParamStore | None = None):
        self.cfg = cfg
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(seed)
        store = ParamStore()
        store.add(
            "cond_table", rng.normal(0.0, 1.0 / np.sqrt(cfg.dim), (cfg.num_topics, cfg.dim))
        )
        init_tower_params(store, "user", cfg.profile_dim + cfg.dim, cfg.hidden, cfg.dim, rng)
        init_tower_params(
            store, "item", cfg.item_feature_dim + cfg.id_dim, cfg.hidden, cfg.dim, rng
        )
        if cfg.num_items > 0:
            store.add("item.id_table", rng.normal(0.0, 0.1, (cfg.num_items, cfg.id_dim)))
        self.params = store

    @classmethod
    def from_checkpoint(cls, cfg: ModelConfig, path) -> "ExplicitModel":
        return cls(cfg, params=load_checkpoint(path))

    def trainable(self, ex: TrainingExample) -> bool:
        return ex.source_topic is not None

    def batch_loss(self, batch, freq, tcfg: TrainerConfig, rng, capture=None) -> Tensor:
        topics = np.array([ex.source_topic for ex in batch], dtype=np.int64)
        if np.any(topics < 0) or np.any(topics >= self.cfg.num_topics):
            raise ValueError("explicit batches require in-vocabulary source topics")
        conds = nc.reshape(
            nc.gather_rows(self.params["cond_table"], topics), (len(batch), 1, self.cfg.dim)
        )
        profiles = np.stack([ex.user.profile for ex in batch])
        user_embs = user_tower_tensor(profiles, conds, self.params)
        target_feats = np.stack([ex.item_features for ex in batch])
        target_ids = np.array([ex.item_id for ex in batch])
        item_embs = item_tower_tensor(target_feats, self.params, target_ids)
        p_hat = freq.estimate_all(target_ids)
        loss, _ = sampled_softmax_loss(user_embs, item_embs, p_hat, tcfg, target_ids, rng)
        return loss

    def user_embeddings_for_topics(self, user: UserFeatures, topics) -> UserEmbeddingSet:
        topics = [int(t) for t in topics]
        for t in topics:
            if not 0 <= t < self.cfg.num_topics:
                raise ValueError(f"topic id {t} outside vocabulary")
        conds = nc.gather_rows(self.params["cond_table"], np.array(topics, dtype=np.int64))
        embs = user_tower_tensor(user.profile, conds, self.params).data
        return UserEmbeddingSet(
            embeddings=embs,
            budgets=np.zeros(len(topics), dtype=np.int64),
            source_kind="explicit",
            condition_meta=topics,
        )

    def item_embeddings(self, features: np.ndarray, item_ids, chunk: int = 8192) -> np.ndarray:
        out = np.empty((len(features), self.cfg.dim))
        for lo in range(0, len(features), chunk):
            hi = min(lo + chunk, len(features))
            out[lo:hi] = item_tower_tensor(
                features[lo:hi], self.params, np.asarray(item_ids)[lo:hi]
            ).data
        return out
