"""Sampled softmax training with logQ correction over in-batch negatives.

Each example associates its target item with one of the K user embeddings,
either by hard argmax (ties to the lowest index) or by straight-through
Gumbel selection; only the associated embedding scores the in-batch
negatives. Candidate logits are corrected by subtracting the log sampling
frequency of each item, for the positive and the negatives alike.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

import mvr.numcore as nc
from mvr.interest import EngagementSequence
from mvr.numcore import ParamStore, Tensor
from mvr.towers import UserFeatures

logger = logging.getLogger(__name__)

NEG_MASK = -1e30  # additive logit mask for duplicate in-batch items


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass
class TrainingExample:
    """One engagement: the user state, the engaged item, optional condition.

    ``source_topic`` is present on every explicit-model example and names the
    topic that sourced the impression at logging time.
    """

    user: UserFeatures
    seq: EngagementSequence
    item_id: int
    item_features: np.ndarray
    source_topic: int | None = None
    day: int = 0


@dataclass
class TrainerConfig:
    batch_size: int = 256
    learning_rate: float = 0.1
    epochs: int = 3
    momentum: float = 0.9
    seed: int = 0
    association: str = "argmax"  # argmax | gumbel_st
    gumbel_temperature: float = 1.0
    logq_correction: bool = True

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("in-batch negatives require batch_size >= 2")
        if self.association not in ("argmax", "gumbel_st"):
            raise ValueError(f"unknown association: {self.association!r}")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel temperature must be positive")


# ---------------------------------------------------------------------------
# condition association


def associate_condition(user_embs: np.ndarray, target_emb: np.ndarray) -> int:
    """Index of the user embedding with maximum affinity to the target."""
    dots = np.asarray(user_embs) @ np.asarray(target_emb)
    return int(np.argmax(dots))


def gumbel_st_select(
    dots: Tensor,
    tau: float,
    rng: np.random.Generator | None = None,
    noise: np.ndarray | None = None,
) -> Tensor:
    """Straight-through Gumbel selection weights over the last axis.

    Forward value is exactly one-hot at argmax(dots + g); the backward pass
    follows softmax((dots + g) / tau). ``noise`` overrides the sampled Gumbel
    draws (used by tests and for deterministic replay).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be provided")
        noise = rng.gumbel(size=dots.data.shape)
    perturbed = nc.add(dots, nc.constant(noise))
    soft = nc.softmax(nc.mul(perturbed, nc.constant(1.0 / tau)), axis=-1)
    k = dots.data.shape[-1]
    hard = np.eye(k)[perturbed.data.argmax(axis=-1)]
    return nc.add(soft, nc.constant(hard - soft.data))


# ---------------------------------------------------------------------------
# item frequency estimation


class FrequencyEstimator:
    """Item sampling probabilities, exact or streaming.

    Exact mode keeps full counts (the desk-scale default). Streaming mode
    keeps two fixed-size hashed arrays: A holds the step an item was last
    seen, B an exponentially smoothed gap between sightings; the estimate is
    the reciprocal of the smoothed gap.
    """

    def __init__(self, mode: str = "exact", table_size: int = 1 << 17, alpha: float = 0.05):
        if mode not in ("exact", "streaming"):
            raise ValueError(f"unknown frequency mode: {mode!r}")
        self.mode = mode
        self.alpha = alpha
        self.total = 0
        self.step = 0
        if mode == "exact":
            self.counts: dict[int, int] = {}
        else:
            self.table_size = table_size
            self.last_seen = np.zeros(table_size, dtype=np.int64)
            self.gap = np.zeros(table_size, dtype=np.float64)
            self.seen = np.zeros(table_size, dtype=bool)

    def _slot(self, item_id) -> int:
        return hash(item_id) % self.table_size

    def observe(self, item_id) -> None:
        self.step += 1
        self.total += 1
        if self.mode == "exact":
            self.counts[item_id] = self.counts.get(item_id, 0) + 1
            return
        h = self._slot(item_id)
        if self.seen[h]:
            self.gap[h] = (1.0 - self.alpha) * self.gap[h] + self.alpha * (
                self.step - self.last_seen[h]
            )
        else:
            self.gap[h] = float(self.step - self.last_seen[h])
            self.seen[h] = True
        self.last_seen[h] = self.step

    def observe_all(self, item_ids) -> None:
        for item_id in item_ids:
            self.observe(item_id)

    def estimate(self, item_id) -> float:
        floor = 1.0 / max(self.total, 1)
        if self.mode == "exact":
            count = self.counts.get(item_id, 0)
            return count / self.total if count else floor
        h = self._slot(item_id)
        if not self.seen[h]:
            return floor
        return 1.0 / max(self.gap[h], 1.0)

    def estimate_all(self, item_ids) -> np.ndarray:
        return np.array([self.estimate(i) for i in item_ids])


def estimate_frequency(est: FrequencyEstimator, item_id: int) -> float:
    return est.estimate(item_id)


# ---------------------------------------------------------------------------
# loss


def sampled_softmax_loss(
    user_embs: Tensor,
    item_embs: Tensor,
    p_hat: np.ndarray,
    cfg: TrainerConfig,
    item_ids: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
    gumbel_noise: np.ndarray | None = None,
) -> tuple[Tensor, np.ndarray]:
    """Mean corrected in-batch softmax loss; also returns per-example terms.

    ``user_embs`` is [B, K, d], ``item_embs`` [B, d]. For each example the
    associated embedding scores the whole batch; candidate k's logit is the
    dot product minus log p_hat[k]. Duplicate item ids are masked out of each
    other's negative sets.
    """
    bsz, k, _ = user_embs.data.shape
    if bsz < 2:
        raise ValueError("in-batch negatives require a batch of at least 2")
    dots = nc.reshape(
        nc.matmul(user_embs, nc.reshape(item_embs, (bsz, -1, 1))), (bsz, k)
    )
    if cfg.association == "gumbel_st":
        weights = gumbel_st_select(dots, cfg.gumbel_temperature, rng, gumbel_noise)
        selected = nc.reshape(
            nc.matmul(nc.reshape(weights, (bsz, 1, k)), user_embs), (bsz, -1)
        )
    else:
        idx = dots.data.argmax(axis=1)
        selected = nc.select_rows(user_embs, idx)

    logits = nc.matmul(selected, nc.transpose_last(item_embs))
    if cfg.logq_correction:
        logits = nc.add(logits, nc.constant(-np.log(p_hat)[None, :]))
    if item_ids is not None:
        ids = np.asarray(item_ids)
        dup = (ids[:, None] == ids[None, :]) & ~np.eye(bsz, dtype=bool)
        if dup.any():
            logits = nc.add(logits, nc.constant(np.where(dup, NEG_MASK, 0.0)))
    log_probs = nc.log_softmax(logits, axis=1)
    eye = nc.constant(np.eye(bsz))
    per_example = -(log_probs.data * np.eye(bsz)).sum(axis=1)
    loss = nc.mul(nc.sum_(nc.mul(log_probs, eye)), nc.constant(-1.0 / bsz))
    return loss, per_example


# ---------------------------------------------------------------------------
# optimizer and loop


class SgdMomentum:
    def __init__(self, store: ParamStore, lr: float, momentum: float):
        self.store = store
        self.lr = lr
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        for name, t in self.store.items():
            g = t.grad
            if g is None:
                continue
            v = self.velocity[name]
            v *= self.momentum
            v += g
            t.data = t.data - self.lr * v


def train(dataset, model, cfg: TrainerConfig) -> list[float]:
    """Shuffled minibatch SGD; returns the per-epoch mean loss curve.

    Deterministic given ``cfg.seed``. Aborts with TrainingDivergedError and a
    diagnostic when the loss goes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    freq = FrequencyEstimator("exact")
    freq.observe_all(ex.item_id for ex in dataset)
    opt = SgdMomentum(model.params, cfg.learning_rate, cfg.momentum)
    curve: list[float] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(dataset), cfg.batch_size):
            batch_idx = order[start : start + cfg.batch_size]
            if len(batch_idx) < 2:
                continue
            batch = [dataset[i] for i in batch_idx]
            model.params.zero_grad()
            loss = model.batch_loss(batch, freq, cfg, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss.backward()
            opt.step()
            losses.append(value)
        epoch_mean = float(np.mean(losses))
        curve.append(epoch_mean)
        logger.info("epoch %d mean loss %.6f", epoch, epoch_mean)
    return curve


def write_loss_curve(path, curve) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in enumerate(curve):
            writer.writerow([epoch, f"{value:.10f}"])
