"""Tower contracts: conditioning isolation, normalization, checkpoint IO."""

import numpy as np
import pytest

import mvr.numcore as nc
from mvr.numcore import DegenerateVectorError, ParamStore, grad_check
from mvr.towers import (
    CheckpointError,
    UnknownTopicError,
    UserFeatures,
    embed_condition,
    init_tower_params,
    item_tower,
    item_tower_tensor,
    load_checkpoint,
    save_checkpoint,
    user_tower,
    user_tower_tensor,
)


def make_user_params(d_u=4, d_c=3, hidden=8, d_out=5, seed=0):
    store = ParamStore()
    init_tower_params(store, "user", d_u + d_c, hidden, d_out, np.random.default_rng(seed))
    return store


def make_item_params(f=6, hidden=8, d_out=5, seed=1):
    store = ParamStore()
    init_tower_params(store, "item", f, hidden, d_out, np.random.default_rng(seed))
    return store


class TestEmbedCondition:
    def test_row_lookup(self):
        store = ParamStore()
        table = store.add("cond_table", np.eye(3))
        out = embed_condition(0, table)
        np.testing.assert_array_equal(out.data, [1.0, 0.0, 0.0])

    def test_distinct_topics_distinct_rows(self):
        store = ParamStore()
        table = store.add("cond_table", np.arange(6.0).reshape(3, 2))
        a = embed_condition(1, table).data
        b = embed_condition(2, table).data
        assert not np.array_equal(a, b)

    def test_unknown_topic(self):
        store = ParamStore()
        table = store.add("cond_table", np.eye(3))
        with pytest.raises(UnknownTopicError):
            embed_condition(3, table)

    def test_gradient_is_one_hot_row(self):
        store = ParamStore()
        table = store.add("cond_table", np.random.default_rng(0).normal(size=(4, 3)))

        def f(seed):
            row = embed_condition(2, table)
            return nc.sum_(nc.mul(row, row))

        assert grad_check(f, store) < 1e-4
        expect = np.zeros((4, 3))
        expect[2] = 2 * table.data[2]
        np.testing.assert_allclose(store.gradient("cond_table"), expect, atol=1e-12)


class TestUserTower:
    def test_identical_conditions_identical_embeddings(self):
        store = make_user_params()
        u = UserFeatures(profile=np.array([0.1, -0.2, 0.3, 0.4]))
        cond = np.tile(np.array([1.0, 0.0, 2.0]), (3, 1))
        out = user_tower(u, nc.constant(cond), store)
        np.testing.assert_allclose(out.embeddings[0], out.embeddings[1], atol=1e-12)
        np.testing.assert_allclose(out.embeddings[0], out.embeddings[2], atol=1e-12)

    def test_zero_weights_degenerate(self):
        store = ParamStore()
        store.add("user.w1", np.zeros((7, 8)))
        store.add("user.b1", np.zeros(8))
        store.add("user.w2", np.zeros((8, 5)))
        store.add("user.b2", np.zeros(5))
        u = UserFeatures(profile=np.zeros(4))
        with pytest.raises(DegenerateVectorError):
            user_tower(u, nc.constant(np.zeros((2, 3))), store)

    def test_default_bias_breaks_zero(self):
        """The 0.01 final-layer bias keeps step-0 outputs normalizable."""
        store = ParamStore()
        rng = np.random.default_rng(0)
        init_tower_params(store, "user", 7, 8, 5, rng)
        store["user.w1"].data[:] = 0.0
        store["user.w2"].data[:] = 0.0
        u = UserFeatures(profile=np.zeros(4))
        out = user_tower(u, nc.constant(np.zeros((2, 3))), store)
        np.testing.assert_allclose(np.linalg.norm(out.embeddings, axis=1), 1.0)

    def test_unit_norms_on_random_inputs(self):
        store = make_user_params()
        rng = np.random.default_rng(4)
        u = UserFeatures(profile=rng.normal(size=4))
        out = user_tower(u, nc.constant(rng.normal(size=(6, 3))), store)
        np.testing.assert_allclose(
            np.linalg.norm(out.embeddings, axis=1), np.ones(6), atol=1e-9
        )
        out.validate()

    def test_per_condition_isolation(self):
        store = make_user_params()
        rng = np.random.default_rng(5)
        u = UserFeatures(profile=rng.normal(size=4))
        conds = rng.normal(size=(4, 3))
        base = user_tower(u, nc.constant(conds), store).embeddings
        changed = conds.copy()
        changed[2] += 1.0
        new = user_tower(u, nc.constant(changed), store).embeddings
        for j in range(4):
            same = np.allclose(base[j], new[j], atol=1e-12)
            assert same == (j != 2)

    def test_score_range(self):
        store = make_user_params()
        istore = make_item_params(f=6, d_out=5)
        rng = np.random.default_rng(6)
        u = UserFeatures(profile=rng.normal(size=4))
        embs = user_tower(u, nc.constant(rng.normal(size=(3, 3))), store).embeddings
        item = item_tower(rng.normal(size=6), istore)
        scores = embs @ item
        assert np.all(scores >= -1.0 - 1e-12) and np.all(scores <= 1.0 + 1e-12)


class TestItemTower:
    def test_unit_norm(self):
        store = make_item_params()
        rng = np.random.default_rng(7)
        out = item_tower(rng.normal(size=(10, 6)), store)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), np.ones(10), atol=1e-9)

    def test_identical_features_identical_embeddings(self):
        store = make_item_params()
        feats = np.ones(6)
        a = item_tower(feats, store)
        b = item_tower(feats.copy(), store)
        np.testing.assert_array_equal(a, b)

    def test_gradient_through_loss(self):
        store = make_item_params(f=4, hidden=6, d_out=3)
        rng = np.random.default_rng(8)
        feats = rng.normal(size=(2, 4))
        target = rng.normal(size=(2, 3))

        def f(seed):
            diff = nc.add(item_tower_tensor(feats, store), nc.constant(-target))
            return nc.sum_(nc.mul(diff, diff))

        assert grad_check(f, store) < 1e-4

    def test_batched_user_tensor_matches_loop(self):
        store = make_user_params()
        rng = np.random.default_rng(9)
        profile = rng.normal(size=4)
        conds = rng.normal(size=(2, 3, 3))
        batched = user_tower_tensor(profile, nc.constant(conds), store).data
        for b in range(2):
            single = user_tower_tensor(profile, nc.constant(conds[b]), store).data
            np.testing.assert_allclose(batched[b], single, atol=1e-12)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        store = ParamStore()
        rng = np.random.default_rng(10)
        store.add("user.w1", rng.normal(size=(3, 4)))
        store.add("item.b2", rng.normal(size=5))
        store.add("cond_table", rng.normal(size=(7, 2)))
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path)
        loaded = load_checkpoint(path)
        assert sorted(loaded.names()) == sorted(store.names())
        for name in store.names():
            assert loaded[name].data.tobytes() == store[name].data.tobytes()

    def test_truncated_file(self, tmp_path):
        store = ParamStore()
        store.add("w", np.ones((4, 4)))
        path = tmp_path / "model.ckpt"
        save_checkpoint(store, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 17])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError):
            load_checkpoint(path)
