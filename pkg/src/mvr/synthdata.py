"""Reproducible synthetic multi-interest world.

Items are anchored to topics (features = topic anchor + Gaussian noise) with
Zipf popularity; users are interest mixtures with followed topics that may
include a non-engaged long-term interest. Engagement logs carry validity
flags (missing features or negative actions) and explicit-impression logs
record the topic that sourced each impression, so explicit training examples
carry their true condition.

Every generator is a pure function of (config, seed); per-user/day streams
use derived seeds so generation may be parallelized without changing output.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from mvr.interest import EngagementSequence
from mvr.towers import UserFeatures
from mvr.training import TrainingExample


@dataclass
class WorldConfig:
    topics: int = 32
    items_per_topic: int = 1000
    dims: int = 64
    num_users: int = 1000
    interests_min: int = 2
    interests_max: int = 5
    seq_len_min: int = 4
    seq_len_max: int = 12
    days: int = 15
    noise: float = 0.25
    seed: int = 0
    num_features: int = 2
    invalid_rate: float = 0.05
    profile_dim: int = 8
    zipf_s: float = 1.0
    core_fraction: float = 0.7
    follow_prob: float = 0.6
    follow_extra_prob: float = 0.3
    base_engage_rate: float = 0.05
    explicit_impressions_min: int = 3
    explicit_impressions_max: int = 9

    def __post_init__(self):
        counts = [
            self.topics,
            self.items_per_topic,
            self.dims,
            self.num_users,
            self.interests_min,
            self.seq_len_max,
            self.num_features,
        ]
        if any(c < 1 for c in counts):
            raise ValueError("all world counts must be positive")
        if self.days < 2:
            raise ValueError("need at least 2 days for a train/eval split")
        if self.interests_max < self.interests_min:
            raise ValueError("interests range is inverted")

    @property
    def num_items(self) -> int:
        return self.topics * self.items_per_topic

    @property
    def feature_dim(self) -> int:
        return self.num_features * self.dims


@dataclass
class SyntheticUser:
    user_id: int
    mixture: dict[int, float]
    followed_topics: list[int]
    activity: str
    profile: np.ndarray

    @property
    def is_core(self) -> bool:
        return self.activity == "core"

    def features(self) -> UserFeatures:
        return UserFeatures(profile=self.profile, followed_topics=list(self.followed_topics))


@dataclass
class SyntheticItem:
    item_id: int
    topic_id: int
    labels: list[int]
    features: np.ndarray
    popularity: float


@dataclass
class EngagementRecord:
    user_id: int
    day: int
    item_id: int
    action: int
    valid: bool
    missing: bool = False
    source_topic: int | None = None


@dataclass
class World:
    config: WorldConfig
    anchors: np.ndarray
    item_features: np.ndarray
    item_topics: np.ndarray
    item_labels: list[list[int]]
    item_popularity: np.ndarray
    users: list[SyntheticUser]
    _topic_items: dict[int, np.ndarray] = field(default_factory=dict, repr=False)
    _topic_pop: dict[int, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._topic_items:
            for t in range(self.config.topics):
                idx = np.flatnonzero(self.item_topics == t)
                self._topic_items[t] = idx
                w = self.item_popularity[idx]
                self._topic_pop[t] = w / w.sum()

    @property
    def num_items(self) -> int:
        return len(self.item_topics)

    def item(self, item_id: int) -> SyntheticItem:
        return SyntheticItem(
            item_id=item_id,
            topic_id=int(self.item_topics[item_id]),
            labels=list(self.item_labels[item_id]),
            features=self.item_features[item_id],
            popularity=float(self.item_popularity[item_id]),
        )

    def sample_topic_item(self, topic: int, rng: np.random.Generator) -> int:
        return int(rng.choice(self._topic_items[topic], p=self._topic_pop[topic]))


def gen_world(cfg: WorldConfig) -> World:
    """Deterministic world: topic anchors, noisy items, mixture users."""
    rng = np.random.default_rng(cfg.seed)
    anchors = rng.normal(size=(cfg.topics, cfg.dims))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)

    m = cfg.num_items
    sigma = cfg.noise / np.sqrt(cfg.dims)
    topics = np.repeat(np.arange(cfg.topics), cfg.items_per_topic)
    blocks = []
    for _ in range(cfg.num_features):
        blocks.append(anchors[topics] + sigma * rng.normal(size=(m, cfg.dims)))
    features = np.concatenate(blocks, axis=1)

    ranks = rng.permutation(m) + 1
    popularity = 1.0 / ranks.astype(np.float64) ** cfg.zipf_s

    labels: list[list[int]] = []
    for i in range(m):
        extra = int(rng.choice([0, 1, 2], p=[0.5, 0.3, 0.2]))
        lab = {int(topics[i])}
        while len(lab) < 1 + extra:
            lab.add(int(rng.integers(cfg.topics)))
        labels.append(sorted(lab))

    users = []
    for uid in range(cfg.num_users):
        n_int = int(rng.integers(cfg.interests_min, cfg.interests_max + 1))
        n_int = min(n_int, cfg.topics)
        chosen = rng.choice(cfg.topics, size=n_int, replace=False)
        weights = np.sort(rng.dirichlet(np.ones(n_int)))[::-1]
        mixture = {int(t): float(w) for t, w in zip(chosen, weights)}
        follows = [int(t) for t in chosen if rng.random() < cfg.follow_prob]
        if rng.random() < cfg.follow_extra_prob:
            others = [t for t in range(cfg.topics) if t not in mixture]
            if others:
                follows.append(int(rng.choice(others)))
        activity = "core" if rng.random() < cfg.core_fraction else "non_core"
        profile = rng.normal(size=cfg.profile_dim)
        users.append(SyntheticUser(uid, mixture, sorted(set(follows)), activity, profile))

    return World(cfg, anchors, features, topics, labels, popularity, users)


def _day_rng(cfg: WorldConfig, stream: int, user_id: int, day: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream, user_id, day])


def gen_engagements(world: World, user: SyntheticUser, day: int) -> list[EngagementRecord]:
    """One day of organic engagements sampled from mixture x popularity."""
    cfg = world.config
    if day >= cfg.days:
        raise ValueError(f"day {day} outside the {cfg.days}-day window")
    rng = _day_rng(cfg, 101, user.user_id, day)
    if user.is_core:
        count = int(rng.integers(cfg.seq_len_min, cfg.seq_len_max + 1))
    else:
        count = int(rng.integers(0, max(2, cfg.seq_len_min // 2) + 1))
    topics = list(user.mixture)
    probs = np.array([user.mixture[t] for t in topics])
    records = []
    for _ in range(count):
        topic = int(rng.choice(topics, p=probs))
        item = world.sample_topic_item(topic, rng)
        invalid = rng.random() < cfg.invalid_rate
        missing = bool(invalid and rng.random() < 0.5)
        action = -1 if (invalid and not missing) else 1
        records.append(
            EngagementRecord(
                user_id=user.user_id,
                day=day,
                item_id=item,
                action=action,
                valid=not invalid,
                missing=missing,
            )
        )
    return records


def gen_explicit_impressions(
    world: World, user: SyntheticUser, day: int
) -> list[tuple[int, int, bool]]:
    """(source_topic, item_id, engaged) triples from the follows-driven feed.

    A followed topic is sampled per impression slot and an item surfaced from
    it by popularity; engagement probability is mixture-weighted for topics
    the user actually engages with and the configured base rate otherwise.
    """
    cfg = world.config
    if not user.followed_topics:
        return []
    rng = _day_rng(cfg, 202, user.user_id, day)
    count = int(
        rng.integers(cfg.explicit_impressions_min, cfg.explicit_impressions_max + 1)
    )
    out = []
    for _ in range(count):
        topic = int(rng.choice(user.followed_topics))
        item = world.sample_topic_item(topic, rng)
        if topic in user.mixture:
            p = min(0.9, 0.3 + 0.6 * user.mixture[topic])
        else:
            p = cfg.base_engage_rate
        out.append((topic, item, bool(rng.random() < p)))
    return out


def gen_explicit_log(world: World, user: SyntheticUser, day: int) -> list[EngagementRecord]:
    """Engaged explicit impressions, each carrying the topic that sourced it."""
    return [
        EngagementRecord(
            user_id=user.user_id,
            day=day,
            item_id=item,
            action=1,
            valid=True,
            source_topic=topic,
        )
        for topic, item, engaged in gen_explicit_impressions(world, user, day)
        if engaged
    ]


def gen_all_engagements(world: World) -> list[EngagementRecord]:
    return [
        rec
        for user in world.users
        for day in range(world.config.days)
        for rec in gen_engagements(world, user, day)
    ]


def gen_all_explicit(world: World) -> list[EngagementRecord]:
    return [
        rec
        for user in world.users
        for day in range(world.config.days)
        for rec in gen_explicit_log(world, user, day)
    ]


def split_train_eval(records: list, days: int) -> tuple[list, list]:
    """Days 0..days-2 train, the final day evaluates (disjoint by stamp)."""
    train = [r for r in records if r.day < days - 1]
    evals = [r for r in records if r.day == days - 1]
    return train, evals


# ---------------------------------------------------------------------------
# assembling model-facing structures


def sequence_from_records(
    world: World, records: list[EngagementRecord], max_len: int = 128
) -> EngagementSequence:
    records = sorted(records, key=lambda r: (r.day, r.item_id))[-max_len:]
    ids = np.array([r.item_id for r in records], dtype=np.int64)
    feats = world.item_features[ids] if len(ids) else np.zeros((0, world.config.feature_dim))
    missing = np.array([r.missing for r in records], dtype=bool)
    actions = np.array([r.action for r in records], dtype=np.int64)
    days = np.array([r.day for r in records], dtype=np.float64)
    return EngagementSequence.build(ids, feats, actions, days, missing)


def implicit_examples(
    world: World, records: list[EngagementRecord], max_seq_len: int = 128
) -> list[TrainingExample]:
    """Per positive engagement: (user snapshot, prior-day history, target)."""
    by_user: dict[int, list[EngagementRecord]] = {}
    for r in records:
        by_user.setdefault(r.user_id, []).append(r)
    examples = []
    for uid, recs in sorted(by_user.items()):
        user = world.users[uid]
        uf = user.features()
        recs = sorted(recs, key=lambda r: (r.day, r.item_id))
        for i, r in enumerate(recs):
            if not r.valid:
                continue
            history = [h for h in recs if h.day < r.day]
            if not history:
                continue
            seq = sequence_from_records(world, history, max_seq_len)
            if not np.any(seq.valid):
                continue
            examples.append(
                TrainingExample(
                    user=uf,
                    seq=seq,
                    item_id=r.item_id,
                    item_features=world.item_features[r.item_id],
                    day=r.day,
                )
            )
    return examples


def explicit_examples(world: World, records: list[EngagementRecord]) -> list[TrainingExample]:
    examples = []
    empty = EngagementSequence.build(
        np.zeros(0, dtype=np.int64),
        np.zeros((0, world.config.feature_dim)),
        np.zeros(0, dtype=np.int64),
        np.zeros(0),
        np.zeros(0, dtype=bool),
    )
    for r in records:
        if r.source_topic is None:
            raise ValueError("explicit records must carry a source topic")
        examples.append(
            TrainingExample(
                user=world.users[r.user_id].features(),
                seq=empty,
                item_id=r.item_id,
                item_features=world.item_features[r.item_id],
                source_topic=r.source_topic,
                day=r.day,
            )
        )
    return examples


def make_item_interest_examples(
    world: World, examples: list[TrainingExample], seed: int = 0
) -> list[TrainingExample]:
    """Relabel each example's condition by sampling from the item's label set.

    Same (user, item) pairs as the source-attributed log; the condition is
    re-derived from item attributes (items carry 1-3 topic labels).
    """
    rng = np.random.default_rng([seed, 303])
    out = []
    for ex in examples:
        labels = world.item_labels[ex.item_id]
        topic = int(labels[rng.integers(len(labels))])
        out.append(
            TrainingExample(
                user=ex.user,
                seq=ex.seq,
                item_id=ex.item_id,
                item_features=ex.item_features,
                source_topic=topic,
                day=ex.day,
            )
        )
    return out


# ---------------------------------------------------------------------------
# persistence (JSONL with a config header line)


def _header(cfg: WorldConfig, kind: str) -> str:
    return json.dumps({"kind": kind, "seed": cfg.seed, "config": asdict(cfg)})


def write_world(world: World, path) -> None:
    cfg = world.config
    with open(path, "w") as f:
        f.write(_header(cfg, "world") + "\n")
        body = {
            "items": [
                {
                    "id": int(i),
                    "topic": int(world.item_topics[i]),
                    "labels": [int(t) for t in world.item_labels[i]],
                    "popularity": float(world.item_popularity[i]),
                    "features": [round(x, 9) for x in world.item_features[i]],
                }
                for i in range(world.num_items)
            ],
            "users": [
                {
                    "id": u.user_id,
                    "mixture": {str(t): w for t, w in u.mixture.items()},
                    "follows": u.followed_topics,
                    "activity": u.activity,
                    "profile": [round(x, 9) for x in u.profile],
                }
                for u in world.users
            ],
        }
        f.write(json.dumps(body) + "\n")


def read_world(path) -> World:
    with open(path) as f:
        header = json.loads(f.readline())
        body = json.loads(f.readline())
    if header.get("kind") != "world":
        raise ValueError(f"{path}: not a world file")
    cfg = WorldConfig(**header["config"])
    items = body["items"]
    features = np.array([it["features"] for it in items])
    topics = np.array([it["topic"] for it in items], dtype=np.int64)
    labels = [list(it["labels"]) for it in items]
    popularity = np.array([it["popularity"] for it in items])
    users = [
        SyntheticUser(
            user_id=u["id"],
            mixture={int(t): float(w) for t, w in u["mixture"].items()},
            followed_topics=list(u["follows"]),
            activity=u["activity"],
            profile=np.array(u["profile"]),
        )
        for u in body["users"]
    ]
    rng = np.random.default_rng(cfg.seed)
    anchors = rng.normal(size=(cfg.topics, cfg.dims))
    anchors /= np.linalg.norm(anchors, axis=1, keepdims=True)
    return World(cfg, anchors, features, topics, labels, popularity, users)


def write_records(records: list[EngagementRecord], cfg: WorldConfig, path, kind: str) -> None:
    with open(path, "w") as f:
        f.write(_header(cfg, kind) + "\n")
        for r in records:
            row = {
                "user_id": r.user_id,
                "day": r.day,
                "item_id": r.item_id,
                "action": r.action,
                "valid": r.valid,
            }
            if r.source_topic is not None:
                row["source_topic"] = r.source_topic
            f.write(json.dumps(row) + "\n")


def read_records(path) -> tuple[list[EngagementRecord], dict]:
    records = []
    with open(path) as f:
        header = json.loads(f.readline())
        for line in f:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            valid = bool(row["valid"])
            action = int(row["action"])
            records.append(
                EngagementRecord(
                    user_id=int(row["user_id"]),
                    day=int(row["day"]),
                    item_id=int(row["item_id"]),
                    action=action,
                    valid=valid,
                    missing=(not valid) and action > 0,
                    source_topic=row.get("source_topic"),
                )
            )
    return records, header
