"""Loss values against closed forms, hand-computed cases, and degenerate batches."""

import numpy as np
import pytest

from lightccf.losses import (
    LossConfig,
    bpr_loss,
    cl_ss_loss,
    cl_ui_loss,
    infonce,
    joint_loss,
    l2_penalty,
    na_loss,
    pairwise_sim,
    rowwise_sim,
    touched_rows,
)


def cosine(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


class TestLossConfig:
    def test_defaults(self):
        cfg = LossConfig()
        assert cfg.tau == 0.2 and cfg.alpha == 1.0 and cfg.beta == 1e-4

    @pytest.mark.parametrize("kwargs", [
        {"tau": 0.0}, {"tau": -1.0}, {"alpha": -0.5}, {"beta": -1e-4},
        {"na_negatives": "everything"},
    ])
    def test_invalid_values_raise(self, kwargs):
        with pytest.raises(ValueError):
            LossConfig(**kwargs)


class TestSimilarities:
    def test_pairwise_dot(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        np.testing.assert_allclose(pairwise_sim(a, b, "dot"), a @ b.T)

    def test_pairwise_cosine(self, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(5, 4))
        s = pairwise_sim(a, b, "cosine")
        for i in range(3):
            for j in range(5):
                assert s[i, j] == pytest.approx(cosine(a[i], b[j]))

    def test_rowwise_matches_pairwise_diagonal(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        np.testing.assert_allclose(
            rowwise_sim(a, b, "cosine"), np.diagonal(pairwise_sim(a, b, "cosine"))
        )

    def test_zero_vector_raises(self):
        with pytest.raises(ValueError, match="zero"):
            pairwise_sim(np.zeros((1, 3)), np.ones((1, 3)), "cosine")

    def test_unknown_kind_raises(self, rng):
        with pytest.raises(ValueError, match="kind"):
            pairwise_sim(rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), "euclid")


class TestInfoNCE:
    def test_matches_manual_formula(self, rng):
        a = rng.normal(size=4)
        p = rng.normal(size=4)
        negs = rng.normal(size=(6, 4))
        tau = 0.3
        s_pos = cosine(a, p)
        s_neg = np.array([cosine(a, n) for n in negs])
        expected = -s_pos / tau + np.log(np.exp(s_neg / tau).sum())
        assert infonce(a, p, negs, tau) == pytest.approx(expected)

    def test_zero_when_positive_is_sole_denominator_entry(self, rng):
        a = rng.normal(size=4)
        p = rng.normal(size=4)
        assert infonce(a, p, p[None, :], tau=0.2) == pytest.approx(0.0)

    def test_empty_negatives_raise(self, rng):
        with pytest.raises(ValueError, match="non-empty"):
            infonce(rng.normal(size=3), rng.normal(size=3), np.empty((0, 3)), 0.2)

    def test_large_magnitudes_stay_finite(self):
        a = np.array([1e3, 0.0])
        negs = np.array([[1e3, 1.0], [-1e3, 0.0]])
        assert np.isfinite(infonce(a, negs[0], negs, tau=0.2, kind="dot"))


class TestContrastiveVariants:
    def test_cl_ss_degenerate_batch_is_zero(self, rng):
        u = rng.normal(size=(3, 4))
        i = rng.normal(size=(5, 4))
        assert cl_ss_loss([1], [2], u, i, tau=0.2) == pytest.approx(0.0)

    def test_cl_ss_matches_manual(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(6, 3))
        users, items = np.array([0, 2]), np.array([1, 4])
        tau = 0.25
        expected = 0.0
        for idx, table in ((users, u), (items, i)):
            rows = table[idx]
            for r in range(len(idx)):
                s = np.array([cosine(rows[r], rows[c]) for c in range(len(idx))])
                expected += (-s[r] / tau + np.log(np.exp(s / tau).sum())) / len(idx)
        assert cl_ss_loss(users, items, u, i, tau) == pytest.approx(expected)

    def test_cl_ss_size_one_warns(self, rng, caplog):
        with caplog.at_level("WARNING"):
            cl_ss_loss([0], [0], rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), 0.2)
        assert "size-1" in caplog.text

    def test_cl_ui_single_pair_is_zero(self, rng):
        u = rng.normal(size=(2, 3))
        i = rng.normal(size=(2, 3))
        assert cl_ui_loss([0], [1], u, i, tau=0.2) == pytest.approx(0.0)

    def test_cl_ui_matches_manual(self, rng):
        u = rng.normal(size=(5, 3))
        i = rng.normal(size=(7, 3))
        users, items = np.array([0, 1, 3]), np.array([2, 2, 6])
        tau = 0.2
        expected = 0.0
        for r in range(3):
            s = np.array([cosine(u[users[r]], i[items[c]]) for c in range(3)])
            expected += (-s[r] / tau + np.log(np.exp(s / tau).sum())) / 3
        assert cl_ui_loss(users, items, u, i, tau) == pytest.approx(expected)

    def test_empty_batch_raises(self, rng):
        with pytest.raises(ValueError):
            cl_ui_loss([], [], rng.normal(size=(2, 3)), rng.normal(size=(2, 3)), 0.2)


class TestNALoss:
    def test_zero_when_denominator_equals_positive(self, rng):
        # two users sharing one item: each pair's only negative is the other
        # pair's item, which is the anchor's own positive vector
        u = rng.normal(size=(2, 4))
        i = rng.normal(size=(3, 4))
        users = np.array([0, 1])
        items = np.array([2, 2])
        assert na_loss(users, items, u, i, LossConfig()) == pytest.approx(0.0)

    def test_matches_manual(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(5, 3))
        users = np.array([0, 1, 2])
        items = np.array([4, 0, 2])
        tau = 0.2
        expected = 0.0
        for r in range(3):
            s_pos = cosine(u[users[r]], i[items[r]])
            s_neg = [cosine(u[users[r]], i[items[c]]) for c in range(3) if users[c] != users[r]]
            expected += (-s_pos / tau + np.log(np.exp(np.array(s_neg) / tau).sum())) / 3
        assert na_loss(users, items, u, i, LossConfig(tau=tau)) == pytest.approx(expected)

    def test_other_items_and_users_mode(self, rng):
        u = rng.normal(size=(3, 3))
        i = rng.normal(size=(3, 3))
        users = np.array([0, 1])
        items = np.array([0, 1])
        cfg = LossConfig(na_negatives="other_items_and_users")
        tau = cfg.tau
        expected = 0.0
        for r, other in ((0, 1), (1, 0)):
            s_pos = cosine(u[users[r]], i[items[r]])
            s_neg = np.array([
                cosine(u[users[r]], i[items[other]]),
                cosine(u[users[r]], u[users[other]]),
            ])
            expected += (-s_pos / tau + np.log(np.exp(s_neg / tau).sum())) / 2
        assert na_loss(users, items, u, i, cfg) == pytest.approx(expected)

    def test_same_user_pairs_excluded(self, rng):
        # anchor user 0 appears twice; its second pair must not be a negative
        u = rng.normal(size=(3, 3))
        i = rng.normal(size=(4, 3))
        users = np.array([0, 0, 1])
        items = np.array([0, 1, 2])
        tau = 0.2
        loss = na_loss(users, items, u, i, LossConfig(tau=tau))
        expected = 0.0
        for r in range(3):
            s_pos = cosine(u[users[r]], i[items[r]])
            s_neg = [cosine(u[users[r]], i[items[c]]) for c in range(3) if users[c] != users[r]]
            expected += (-s_pos / tau + np.log(np.exp(np.array(s_neg) / tau).sum())) / 3
        assert loss == pytest.approx(expected)

    def test_no_valid_negatives_raises(self, rng):
        u = rng.normal(size=(1, 3))
        i = rng.normal(size=(3, 3))
        with pytest.raises(ValueError, match="no valid negatives"):
            na_loss(np.array([0, 0]), np.array([0, 1]), u, i, LossConfig())

    def test_batch_of_one_raises(self, rng):
        with pytest.raises(ValueError, match="at least 2"):
            na_loss(np.array([0]), np.array([0]),
                    rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), LossConfig())


class TestBPRLoss:
    def test_equal_scores_give_log_two(self):
        u = np.ones((2, 3))
        i = np.vstack([np.ones(3), np.ones(3)])
        assert bpr_loss([0, 1], [0, 1], [1, 0], u, i) == pytest.approx(np.log(2.0))

    def test_matches_manual(self, rng):
        u = rng.normal(size=(3, 4))
        i = rng.normal(size=(5, 4))
        users, pos, neg = [0, 2], [1, 3], [4, 0]
        expected = np.mean([
            np.log(1 + np.exp(-(u[a] @ i[b] - u[a] @ i[c])))
            for a, b, c in zip(users, pos, neg)
        ])
        assert bpr_loss(users, pos, neg, u, i) == pytest.approx(expected)

    def test_extreme_scores_stay_finite(self):
        u = np.array([[1e4]])
        i = np.array([[1.0], [-1.0]])
        assert np.isfinite(bpr_loss([0], [1], [0], u, i))
        assert bpr_loss([0], [0], [1], u, i) == pytest.approx(0.0, abs=1e-12)


class TestRegularization:
    def test_touched_rows(self):
        u, i = touched_rows([0, 2, 0], [1, 1, 3], [4, 5, 4])
        np.testing.assert_array_equal(u, [0, 2])
        np.testing.assert_array_equal(i, [1, 3, 4, 5])

    def test_batch_penalty(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(6, 3))
        val = l2_penalty([0, 1], [2, 3], [4, 4], u, i)
        expected = (u[[0, 1]] ** 2).sum() + (i[[2, 3, 4]] ** 2).sum()
        assert val == pytest.approx(expected)

    def test_full_penalty(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(6, 3))
        assert l2_penalty([0], [0], [1], u, i, full=True) == pytest.approx(
            (u ** 2).sum() + (i ** 2).sum()
        )

    def test_duplicate_rows_counted_once(self, rng):
        u = rng.normal(size=(2, 3))
        i = rng.normal(size=(3, 3))
        val = l2_penalty([0, 0], [1, 1], [1, 1], u, i)
        assert val == pytest.approx((u[0] ** 2).sum() + (i[1] ** 2).sum())


class TestJointLoss:
    def test_combines_terms(self, rng):
        u = rng.normal(size=(5, 4))
        i = rng.normal(size=(7, 4))
        users = np.array([0, 1, 2])
        pos = np.array([0, 3, 5])
        neg = np.array([6, 6, 1])
        cfg = LossConfig(tau=0.22, alpha=0.7, beta=1e-3)
        total, terms = joint_loss(users, pos, neg, u, i, cfg)
        assert terms["bpr"] == pytest.approx(bpr_loss(users, pos, neg, u, i))
        assert terms["na"] == pytest.approx(na_loss(users, pos, u, i, cfg))
        assert terms["reg"] == pytest.approx(l2_penalty(users, pos, neg, u, i))
        assert total == pytest.approx(terms["bpr"] + 0.7 * terms["na"] + 1e-3 * terms["reg"])
        assert terms["total"] == total

    def test_alpha_zero_drops_aggregation_term(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(5, 3))
        cfg = LossConfig(alpha=0.0, beta=0.0)
        total, terms = joint_loss([0, 1], [0, 1], [2, 3], u, i, cfg)
        assert terms["na"] == 0.0
        assert total == pytest.approx(terms["bpr"])

    def test_separate_regularization_tables(self, rng):
        u = rng.normal(size=(4, 3))
        i = rng.normal(size=(5, 3))
        base_u = rng.normal(size=(4, 3))
        base_i = rng.normal(size=(5, 3))
        cfg = LossConfig(beta=1e-2)
        _, terms = joint_loss([0, 1], [0, 1], [2, 3], u, i, cfg,
                              reg_user_emb=base_u, reg_item_emb=base_i)
        assert terms["reg"] == pytest.approx(l2_penalty([0, 1], [0, 1], [2, 3], base_u, base_i))
