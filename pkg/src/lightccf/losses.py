"""Training objectives: InfoNCE, self-sample and user-item contrastive losses,
the neighborhood-aggregation loss, BPR, and the joint multi-task objective.

All losses are pure functions of (batch index arrays, embedding tables, config)
and reduce by mean over the batch so the loss weights and learning rate stay
comparable across batch sizes. Softmax denominators use max-subtraction.

Contrastive similarities default to cosine; BPR uses dot-product scores.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

NA_NEGATIVE_MODES = ("other_items", "other_items_and_users")


@dataclass
class LossConfig:
    """Temperature, loss weights, and negative-set mode for the joint objective."""

    tau: float = 0.2
    alpha: float = 1.0  # neighborhood-aggregation weight
    beta: float = 1e-4  # L2 weight
    na_negatives: str = "other_items"
    similarity: str = "cosine"  # contrastive similarity
    full_reg: bool = False  # regularize full tables instead of batch-touched rows

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.na_negatives not in NA_NEGATIVE_MODES:
            raise ValueError(f"unknown na_negatives mode {self.na_negatives!r}")


def _normalize_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=-1)
    if np.any(norms == 0.0):
        raise ValueError("cosine similarity undefined for zero vectors")
    return x / norms[..., None], norms


def pairwise_sim(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Similarity matrix S[i, j] = sim(a_i, b_j) under dot or cosine."""
    if kind == "dot":
        return a @ b.T
    if kind == "cosine":
        an, _ = _normalize_rows(a)
        bn, _ = _normalize_rows(b)
        return an @ bn.T
    raise ValueError(f"unknown similarity kind {kind!r}")


def rowwise_sim(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Per-row similarity s[i] = sim(a_i, b_i)."""
    if kind == "dot":
        return np.einsum("ij,ij->i", a, b)
    if kind == "cosine":
        an, _ = _normalize_rows(a)
        bn, _ = _normalize_rows(b)
        return np.einsum("ij,ij->i", an, bn)
    raise ValueError(f"unknown similarity kind {kind!r}")


def _logsumexp(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    return np.squeeze(m, axis=axis) + np.log(np.sum(np.exp(x - m), axis=axis))


def infonce(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    tau: float,
    kind: str = "cosine",
) -> float:
    """-log(exp(sim(a, p)/tau) / sum_k exp(sim(a, k)/tau)) over the given negatives.

    The positive enters the denominator only if the caller includes it in
    ``negatives`` (each contrastive variant owns its denominator set).
    """
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.shape[0] == 0:
        raise ValueError("negative set must be non-empty")
    s_pos = rowwise_sim(anchor[None, :], positive[None, :], kind)[0]
    s_neg = pairwise_sim(anchor[None, :], negatives, kind)[0]
    return float(-s_pos / tau + _logsumexp(s_neg / tau))


def cl_ss_loss(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    tau: float,
    kind: str = "cosine",
) -> float:
    """Self-sample contrastive loss: each anchor is its own positive, in-batch
    peers (anchor included) are the denominator. User side plus item side,
    each averaged over its anchors."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) == 0 or len(items) == 0:
        raise ValueError("batch must be non-empty")
    if len(users) == 1 and len(items) == 1:
        logger.warning("cl_ss_loss on a size-1 batch degenerates to 0")
    total = 0.0
    for idx, table in ((users, user_emb), (items, item_emb)):
        rows = table[idx]
        s = pairwise_sim(rows, rows, kind)
        s_pos = np.diagonal(s)
        total += float(np.mean(-s_pos / tau + _logsumexp(s / tau, axis=1)))
    return total


def cl_ui_loss(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    tau: float,
    kind: str = "cosine",
) -> float:
    """User-item contrastive loss: anchor e_u, positive its interacted item,
    denominator all in-batch items (own positive included); mean over pairs."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) == 0:
        raise ValueError("batch must be non-empty")
    u_rows = user_emb[users]
    i_rows = item_emb[items]
    s = pairwise_sim(u_rows, i_rows, kind)
    s_pos = np.diagonal(s)
    return float(np.mean(-s_pos / tau + _logsumexp(s / tau, axis=1)))


def _na_candidate_mask(users: np.ndarray, mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Valid-negative mask for the NA loss.

    Candidates are the other positive pairs of the batch: their items, and
    additionally their users under ``other_items_and_users``. Pairs sharing the
    anchor's user are that user's own positives and are excluded.
    Returns (mask B x K, candidate_owner users length K).
    """
    b = len(users)
    if mode == "other_items":
        owners = users
    elif mode == "other_items_and_users":
        owners = np.concatenate([users, users])
    else:
        raise ValueError(f"unknown na_negatives mode {mode!r}")
    mask = users[:, None] != owners[None, :]
    if not mask.any(axis=1).all():
        raise ValueError("a pair has no valid negatives (all batch pairs share its user)")
    assert mask.shape == (b, len(owners))
    return mask, owners


def na_loss(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: LossConfig,
) -> float:
    """Neighborhood-aggregation loss: pull each user toward its interacted item,
    push it from the other positive pairs of the batch; mean over pairs.

    Per pair (u, i): -sim(e_u, e_i)/tau + log sum over other pairs p of
    exp(sim(e_u, e_p)/tau), where e_p is the item embedding of pair p (plus the
    user embedding under ``other_items_and_users``).
    """
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    if len(users) < 2:
        raise ValueError("NA loss needs at least 2 pairs in the batch")
    mask, _ = _na_candidate_mask(users, cfg.na_negatives)
    u_rows = user_emb[users]
    cand = item_emb[items]
    if cfg.na_negatives == "other_items_and_users":
        cand = np.vstack([cand, user_emb[users]])
    s_pos = rowwise_sim(u_rows, item_emb[items], cfg.similarity)
    s = pairwise_sim(u_rows, cand, cfg.similarity)
    logits = np.where(mask, s / cfg.tau, -np.inf)
    return float(np.mean(-s_pos / cfg.tau + _logsumexp(logits, axis=1)))


def bpr_loss(
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
) -> float:
    """Pairwise ranking loss -log sigmoid(score_pos - score_neg), mean over
    triplets, computed via the stable softplus form."""
    u = user_emb[np.asarray(users, dtype=np.int64)]
    delta = np.einsum("ij,ij->i", u, item_emb[np.asarray(pos_items, dtype=np.int64)]) - np.einsum(
        "ij,ij->i", u, item_emb[np.asarray(neg_items, dtype=np.int64)]
    )
    # softplus(-delta) = log(1 + exp(-delta)) without overflow
    loss = np.logaddexp(0.0, -delta)
    return float(np.mean(loss))


def touched_rows(users: np.ndarray, pos_items: np.ndarray, neg_items: np.ndarray):
    """Unique user and item rows referenced by a BPR batch."""
    u = np.unique(np.asarray(users, dtype=np.int64))
    i = np.unique(np.concatenate([np.asarray(pos_items, np.int64), np.asarray(neg_items, np.int64)]))
    return u, i


def l2_penalty(
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    full: bool = False,
) -> float:
    """Squared L2 norm of the regularized rows (batch-touched unless ``full``)."""
    if full:
        return float((user_emb ** 2).sum() + (item_emb ** 2).sum())
    u, i = touched_rows(users, pos_items, neg_items)
    return float((user_emb[u] ** 2).sum() + (item_emb[i] ** 2).sum())


def joint_loss(
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: LossConfig,
    reg_user_emb: np.ndarray | None = None,
    reg_item_emb: np.ndarray | None = None,
) -> tuple[float, dict[str, float]]:
    """Joint objective: BPR + alpha * NA + beta * L2 over batch-touched rows.

    ``reg_user_emb``/``reg_item_emb`` let the caller regularize the base tables
    while the loss terms see propagated embeddings; they default to the tables
    the losses use. Returns (total, per-term breakdown).
    """
    if reg_user_emb is None:
        reg_user_emb = user_emb
    if reg_item_emb is None:
        reg_item_emb = item_emb
    l_bpr = bpr_loss(users, pos_items, neg_items, user_emb, item_emb)
    l_na = na_loss(users, pos_items, user_emb, item_emb, cfg) if cfg.alpha > 0 else 0.0
    l_reg = l2_penalty(users, pos_items, neg_items, reg_user_emb, reg_item_emb, cfg.full_reg)
    total = l_bpr + cfg.alpha * l_na + cfg.beta * l_reg
    return total, {"bpr": l_bpr, "na": l_na, "reg": l_reg, "total": total}
