"""Embedding state, initialization statistics, similarity, and checkpoints."""

import numpy as np
import pytest

from lightccf.model import (
    EmbeddingState,
    init_xavier,
    load_checkpoint,
    save_checkpoint,
    score_all_items,
    similarity,
)


class TestInit:
    def test_bounds(self):
        state = init_xavier(50, 60, 16, seed=0)
        bound = np.sqrt(6.0 / 32)
        for arr in (state.user_emb, state.item_emb):
            assert np.abs(arr).max() <= bound

    def test_mean_within_three_sigma(self):
        # 10^5 uniform entries: sd of the sample mean is bound / sqrt(3 * n)
        state = init_xavier(1000, 250, 80, seed=1)
        entries = np.concatenate([state.user_emb.ravel(), state.item_emb.ravel()])
        assert entries.size == 10 ** 5
        bound = np.sqrt(6.0 / 160)
        sigma = bound / np.sqrt(3 * entries.size)
        assert abs(entries.mean()) < 3 * sigma

    def test_deterministic(self):
        a = init_xavier(10, 12, 4, seed=9)
        b = init_xavier(10, 12, 4, seed=9)
        np.testing.assert_array_equal(a.user_emb, b.user_emb)
        np.testing.assert_array_equal(a.item_emb, b.item_emb)

    def test_bad_dim_raises(self):
        with pytest.raises(ValueError):
            init_xavier(5, 5, 0)

    def test_state_properties(self):
        state = init_xavier(7, 9, 3)
        assert (state.num_users, state.num_items, state.dim) == (7, 9, 3)
        assert state.all_finite()
        state.user_emb[0, 0] = np.nan
        assert not state.all_finite()

    def test_copy_is_independent(self):
        state = init_xavier(3, 3, 2)
        clone = state.copy()
        clone.user_emb[0, 0] = 99.0
        assert state.user_emb[0, 0] != 99.0


class TestSimilarity:
    def test_dot(self):
        assert similarity(np.array([1.0, 2.0]), np.array([3.0, -1.0]), "dot") == 1.0

    def test_cosine(self):
        a = np.array([3.0, 0.0])
        b = np.array([1.0, 1.0])
        assert similarity(a, b, "cosine") == pytest.approx(1 / np.sqrt(2))

    def test_cosine_zero_vector_raises(self):
        with pytest.raises(ValueError, match="zero"):
            similarity(np.zeros(2), np.ones(2), "cosine")

    def test_dimension_mismatch_raises(self):
        with pytest.raises(ValueError, match="mismatch"):
            similarity(np.ones(2), np.ones(3), "dot")

    def test_unknown_kind_raises(self):
        with pytest.raises(ValueError, match="kind"):
            similarity(np.ones(2), np.ones(2), "manhattan")


def test_score_all_items(rng):
    state = EmbeddingState(rng.normal(size=(4, 5)), rng.normal(size=(6, 5)))
    np.testing.assert_allclose(score_all_items(2, state), state.item_emb @ state.user_emb[2])


class TestCheckpoint:
    def test_round_trip_exact(self, rng, tmp_path):
        state = EmbeddingState(rng.normal(size=(5, 3)), rng.normal(size=(7, 3)))
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(state, path, seed=42, similarity_kind="cosine")
        back, header = load_checkpoint(path)
        np.testing.assert_array_equal(back.user_emb, state.user_emb)
        np.testing.assert_array_equal(back.item_emb, state.item_emb)
        assert header["seed"] == 42
        assert header["similarity"] == "cosine"
        assert header["dim"] == 3

    def test_bad_magic_raises(self, tmp_path):
        path = tmp_path / "bogus.bin"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="not a checkpoint"):
            load_checkpoint(str(path))

    def test_trailing_bytes_raise(self, rng, tmp_path):
        state = EmbeddingState(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)))
        path = str(tmp_path / "ckpt.bin")
        save_checkpoint(state, path)
        with open(path, "ab") as fh:
            fh.write(b"junk")
        with pytest.raises(ValueError, match="trailing"):
            load_checkpoint(path)
