"""Analytic gradients for every objective, a finite-difference oracle, and the
plain gradient-descent demonstrations (per-example, user-item, and matrix form).

Gradients are hand-derived; the embedding model is linear in row lookups so
closed forms exist for every loss. Cosine-similarity gradients carry the full
normalization Jacobian. The finite-difference oracle is the safety net and is
kept independent of every analytic path.

The gradient-descent step functions use dot-product softmax probabilities and
synchronous batch semantics: every gradient in a step is evaluated at the
pre-step embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LossConfig, _logsumexp, _na_candidate_mask, _normalize_rows, touched_rows
from .model import EmbeddingState


class GradAccumulator:
    """Sparse per-row gradient accumulator over the user and item tables."""

    def __init__(self, dim: int):
        self.dim = dim
        self._parts: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {"user": [], "item": []}

    def add(self, table: str, rows: np.ndarray, vals: np.ndarray) -> None:
        rows = np.asarray(rows, dtype=np.int64).ravel()
        vals = np.asarray(vals, dtype=np.float64).reshape(len(rows), self.dim)
        self._parts[table].append((rows, vals))

    def add_scaled(self, other: "GradAccumulator", scale: float = 1.0) -> None:
        for table in ("user", "item"):
            for rows, vals in other._parts[table]:
                self._parts[table].append((rows, scale * vals))

    def compact(self, table: str) -> tuple[np.ndarray, np.ndarray]:
        """Unique touched rows and their summed gradients (deterministic order)."""
        parts = self._parts[table]
        if not parts:
            return np.empty(0, np.int64), np.empty((0, self.dim))
        rows = np.concatenate([r for r, _ in parts])
        vals = np.concatenate([v for _, v in parts])
        uniq, inv = np.unique(rows, return_inverse=True)
        out = np.zeros((len(uniq), self.dim))
        np.add.at(out, inv, vals)
        return uniq, out

    def as_dict(self) -> dict[tuple[str, int], np.ndarray]:
        out: dict[tuple[str, int], np.ndarray] = {}
        for table in ("user", "item"):
            rows, vals = self.compact(table)
            for r, v in zip(rows, vals):
                out[(table, int(r))] = v
        return out

    def to_dense(self, num_users: int, num_items: int) -> tuple[np.ndarray, np.ndarray]:
        du = np.zeros((num_users, self.dim))
        di = np.zeros((num_items, self.dim))
        rows, vals = self.compact("user")
        du[rows] = vals
        rows, vals = self.compact("item")
        di[rows] = vals
        return du, di

    def all_finite(self) -> bool:
        return all(
            np.isfinite(v).all() for parts in self._parts.values() for _, v in parts
        )


# ------------------------------------------------------- similarity backprop

def _rowwise_backprop(w: np.ndarray, a: np.ndarray, b: np.ndarray, kind: str):
    """Backprop upstream weights w through s_i = sim(a_i, b_i)."""
    if kind == "dot":
        return w[:, None] * b, w[:, None] * a
    an, na = _normalize_rows(a)
    bn, nb = _normalize_rows(b)
    s = np.einsum("ij,ij->i", an, bn)
    da = w[:, None] * (bn - s[:, None] * an) / na[:, None]
    db = w[:, None] * (an - s[:, None] * bn) / nb[:, None]
    return da, db


def _pairwise_backprop(w: np.ndarray, a: np.ndarray, c: np.ndarray, kind: str):
    """Backprop upstream weight matrix w through S = sim(a_i, c_j).

    Returns independent (da, dc); when a and c alias rows the caller's
    scatter-add realizes the product rule.
    """
    if kind == "dot":
        return w @ c, w.T @ a
    an, na = _normalize_rows(a)
    cn, nc = _normalize_rows(c)
    s = an @ cn.T
    ws = w * s
    da = (w @ cn - ws.sum(axis=1)[:, None] * an) / na[:, None]
    dc = (w.T @ an - ws.sum(axis=0)[:, None] * cn) / nc[:, None]
    return da, dc


def _masked_softmax(logits: np.ndarray) -> np.ndarray:
    """Row softmax over entries that are not -inf; masked entries get 0."""
    m = np.max(logits, axis=1, keepdims=True)
    w = np.exp(logits - m)
    w[~np.isfinite(logits)] = 0.0
    return w / w.sum(axis=1, keepdims=True)


# ------------------------------------------------------------ loss gradients

def infonce_grad(
    anchor: np.ndarray,
    positive: np.ndarray,
    negatives: np.ndarray,
    tau: float,
    kind: str = "cosine",
):
    """Gradients of the InfoNCE loss w.r.t. anchor, positive, and each negative.

    Under dot similarity the anchor gradient is -(1/tau) (e_pos - sum_k p_k e_k)
    with p the softmax over the negatives; cosine adds the normalization
    Jacobian. Returns (g_anchor, g_positive, g_negatives).
    """
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    a = anchor[None, :]
    if kind == "dot":
        s = (a @ negatives.T)[0]
    else:
        an, _ = _normalize_rows(a)
        nn, _ = _normalize_rows(negatives)
        s = (an @ nn.T)[0]
    p = np.exp(s / tau - np.max(s / tau))
    p /= p.sum()
    da_pos, d_pos = _rowwise_backprop(np.array([-1.0 / tau]), a, positive[None, :], kind)
    da_neg, d_neg = _pairwise_backprop((p / tau)[None, :], a, negatives, kind)
    return (da_pos + da_neg)[0], d_pos[0], d_neg


def bpr_grad(
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
) -> GradAccumulator:
    """Gradient of the mean BPR loss: d/d delta = -sigmoid(-delta) / B."""
    users = np.asarray(users, np.int64)
    pos_items = np.asarray(pos_items, np.int64)
    neg_items = np.asarray(neg_items, np.int64)
    u = user_emb[users]
    i = item_emb[pos_items]
    j = item_emb[neg_items]
    delta = np.einsum("kj,kj->k", u, i) - np.einsum("kj,kj->k", u, j)
    coef = -1.0 / (1.0 + np.exp(delta)) / len(users)  # -sigmoid(-delta)/B
    acc = GradAccumulator(user_emb.shape[1])
    acc.add("user", users, coef[:, None] * (i - j))
    acc.add("item", pos_items, coef[:, None] * u)
    acc.add("item", neg_items, -coef[:, None] * u)
    return acc


def cl_ss_grad(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    tau: float,
    kind: str = "cosine",
) -> GradAccumulator:
    """Gradient of the self-sample contrastive loss (both sides)."""
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    acc = GradAccumulator(user_emb.shape[1])
    for idx, table, name in ((users, user_emb, "user"), (items, item_emb, "item")):
        rows = table[idx]
        n = len(idx)
        if kind == "dot":
            s = rows @ rows.T
        else:
            rn, _ = _normalize_rows(rows)
            s = rn @ rn.T
        w = _masked_softmax(s / tau) / (tau * n)
        w[np.arange(n), np.arange(n)] -= 1.0 / (tau * n)
        da, dc = _pairwise_backprop(w, rows, rows, kind)
        acc.add(name, idx, da)
        acc.add(name, idx, dc)
    return acc


def cl_ui_grad(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    tau: float,
    kind: str = "cosine",
) -> GradAccumulator:
    """Gradient of the user-item contrastive loss."""
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    b = len(users)
    u_rows = user_emb[users]
    i_rows = item_emb[items]
    if kind == "dot":
        s = u_rows @ i_rows.T
    else:
        un, _ = _normalize_rows(u_rows)
        inr, _ = _normalize_rows(i_rows)
        s = un @ inr.T
    w = _masked_softmax(s / tau) / (tau * b)
    w[np.arange(b), np.arange(b)] -= 1.0 / (tau * b)
    da, dc = _pairwise_backprop(w, u_rows, i_rows, kind)
    acc = GradAccumulator(user_emb.shape[1])
    acc.add("user", users, da)
    acc.add("item", items, dc)
    return acc


def na_grad(
    users: np.ndarray,
    items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: LossConfig,
) -> GradAccumulator:
    """Exact gradient of na_loss w.r.t. every touched embedding row."""
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    b = len(users)
    if b < 2:
        raise ValueError("NA loss needs at least 2 pairs in the batch")
    mask, _ = _na_candidate_mask(users, cfg.na_negatives)
    u_rows = user_emb[users]
    cand = item_emb[items]
    cand_tables: list[tuple[str, np.ndarray]] = [("item", items)]
    if cfg.na_negatives == "other_items_and_users":
        cand = np.vstack([cand, user_emb[users]])
        cand_tables.append(("user", users))
    kind = cfg.similarity
    if kind == "dot":
        s = u_rows @ cand.T
    else:
        un, _ = _normalize_rows(u_rows)
        cn, _ = _normalize_rows(cand)
        s = un @ cn.T
    logits = np.where(mask, s / cfg.tau, -np.inf)
    w = _masked_softmax(logits) / (cfg.tau * b)
    acc = GradAccumulator(user_emb.shape[1])
    da, dc = _pairwise_backprop(w, u_rows, cand, kind)
    acc.add("user", users, da)
    for k, (table, idx) in enumerate(cand_tables):
        acc.add(table, idx, dc[k * b:(k + 1) * b])
    # positive term: -sim(e_u, e_i)/tau, mean over batch
    du, di = _rowwise_backprop(np.full(b, -1.0 / (cfg.tau * b)), u_rows, item_emb[items], kind)
    acc.add("user", users, du)
    acc.add("item", items, di)
    return acc


def joint_grad(
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: LossConfig,
    include_reg: bool = True,
) -> GradAccumulator:
    """Gradient of BPR + alpha * NA (+ beta * L2 over batch-touched rows)."""
    acc = bpr_grad(users, pos_items, neg_items, user_emb, item_emb)
    if cfg.alpha > 0:
        acc.add_scaled(na_grad(users, pos_items, user_emb, item_emb, cfg), cfg.alpha)
    if include_reg and cfg.beta > 0:
        add_l2_grad(acc, users, pos_items, neg_items, user_emb, item_emb, cfg)
    return acc


def add_l2_grad(
    acc: GradAccumulator,
    users: np.ndarray,
    pos_items: np.ndarray,
    neg_items: np.ndarray,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: LossConfig,
) -> None:
    """Accumulate 2 * beta * row for every regularized row."""
    if cfg.full_reg:
        acc.add("user", np.arange(user_emb.shape[0]), 2.0 * cfg.beta * user_emb)
        acc.add("item", np.arange(item_emb.shape[0]), 2.0 * cfg.beta * item_emb)
        return
    u, i = touched_rows(users, pos_items, neg_items)
    acc.add("user", u, 2.0 * cfg.beta * user_emb[u])
    acc.add("item", i, 2.0 * cfg.beta * item_emb[i])


# -------------------------------------------------- finite-difference oracle

def finite_difference_oracle(
    loss_fn,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    h: float = 1e-5,
    user_rows: np.ndarray | None = None,
    item_rows: np.ndarray | None = None,
) -> dict[tuple[str, int], np.ndarray]:
    """Central-difference gradient of ``loss_fn(user_emb, item_emb)``.

    Restricted to the given rows (all rows by default); O(rows * d) loss
    evaluations. Independent of every analytic gradient path.
    """
    if user_rows is None:
        user_rows = np.arange(user_emb.shape[0])
    if item_rows is None:
        item_rows = np.arange(item_emb.shape[0])
    out: dict[tuple[str, int], np.ndarray] = {}
    u = user_emb.copy()
    i = item_emb.copy()
    for table, rows, arr in (("user", user_rows, u), ("item", item_rows, i)):
        for r in rows:
            g = np.zeros(arr.shape[1])
            for c in range(arr.shape[1]):
                orig = arr[r, c]
                arr[r, c] = orig + h
                f_plus = loss_fn(u, i)
                arr[r, c] = orig - h
                f_minus = loss_fn(u, i)
                arr[r, c] = orig
                g[c] = (f_plus - f_minus) / (2.0 * h)
            out[(table, int(r))] = g
    return out


def max_relative_error(
    analytic: dict[tuple[str, int], np.ndarray],
    numeric: dict[tuple[str, int], np.ndarray],
    floor: float = 1e-8,
) -> float:
    """Max over rows of |analytic - numeric| relative to the full gradient norm.

    Row errors are normalized by the norm of the whole numeric gradient (with
    ``floor`` as a lower bound) rather than per-row norms: rows whose true
    gradient sits below the oracle's own noise floor would otherwise dominate
    the measurement.
    """
    keys = set(analytic) | set(numeric)
    scale = np.sqrt(sum(
        float(np.sum(np.square(np.asarray(numeric.get(k, 0.0))))) for k in keys
    ))
    scale = max(scale, floor)
    worst = 0.0
    for key in keys:
        a = np.asarray(analytic.get(key, 0.0))
        n = np.asarray(numeric.get(key, 0.0))
        worst = max(worst, float(np.linalg.norm(a - n)) / scale)
    return worst


# ------------------------------------------- gradient-descent demonstrations

@dataclass
class GradientMatrices:
    """Ingredients of the matrix-form step: softmax probabilities P (B x K),
    positive-item rows Y (B x d), and the diagnostic elementwise update
    operator Lp (B x d, masked where the anchor entry is ~0)."""

    P: np.ndarray
    Y: np.ndarray
    Lp: np.ndarray


def _batch_softmax(u_rows: np.ndarray, item_rows: np.ndarray, tau: float) -> np.ndarray:
    s = u_rows @ item_rows.T / tau
    s -= s.max(axis=1, keepdims=True)
    p = np.exp(s)
    return p / p.sum(axis=1, keepdims=True)


def user_item_gd_step(
    state: EmbeddingState,
    users: np.ndarray,
    items: np.ndarray,
    tau: float,
    eta: float,
) -> EmbeddingState:
    """Per-example ascent-form update e_u += (eta/tau)(e_i - sum_k p_uk e_k).

    The negatives are the in-batch positive items; dot-product softmax; all
    probabilities use pre-step embeddings (synchronous update).
    """
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    item_rows = state.item_emb[items]
    new = state.copy()
    for b in range(len(users)):
        e_u = state.user_emb[users[b]]
        s = item_rows @ e_u / tau
        p = np.exp(s - s.max())
        p /= p.sum()
        new.user_emb[users[b]] += (eta / tau) * (item_rows[b] - p @ item_rows)
    return new


def sgd_step_infonce(
    state: EmbeddingState,
    users: np.ndarray,
    items: np.ndarray,
    tau: float,
    eta: float,
) -> EmbeddingState:
    """Plain gradient descent on the anchor rows of the user-item InfoNCE loss;
    identical to :func:`user_item_gd_step` with user anchors."""
    return user_item_gd_step(state, users, items, tau, eta)


def matrix_form_step(
    state: EmbeddingState,
    users: np.ndarray,
    items: np.ndarray,
    tau: float,
    eta: float,
) -> tuple[EmbeddingState, GradientMatrices]:
    """Full-batch matrix update E += (eta/tau)(Y - P E_items), scattered by user.

    Equals the per-example updates summed over the batch. Lp is the diagnostic
    elementwise operator with Lp * E_anchor = E_anchor_next wherever the anchor
    entries are nonzero; the update itself never divides.
    """
    users = np.asarray(users, np.int64)
    items = np.asarray(items, np.int64)
    u_rows = state.user_emb[users]
    item_rows = state.item_emb[items]
    p = _batch_softmax(u_rows, item_rows, tau)
    y = item_rows
    delta = (eta / tau) * (y - p @ item_rows)
    new = state.copy()
    np.add.at(new.user_emb, users, delta)
    quotient = np.zeros_like(u_rows)
    safe = np.abs(u_rows) >= 1e-12
    quotient[safe] = delta[safe] / u_rows[safe]
    lp = 1.0 + quotient
    return new, GradientMatrices(P=p, Y=y, Lp=lp)
