"""Top-K ranking metrics, group and robustness breakdowns, diagnostics, timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import GROUP_NAMES, InteractionDataset, sparsity_groups
from .model import EmbeddingState


@dataclass
class EvalReport:
    """Macro-averaged Recall/NDCG per K with optional per-group breakdown."""

    recall: dict[int, float]
    ndcg: dict[int, float]
    users_evaluated: int
    per_group: dict[str, dict[str, dict[int, float]]] = field(default_factory=dict)
    wall_time: float = 0.0

    def metric(self, name: str, k: int) -> float:
        return {"recall": self.recall, "ndcg": self.ndcg}[name][k]

    def rows(self, config: str = "") -> list[dict]:
        """Long-format records (config, group, K, metric, value)."""
        out = []
        for metric, table in (("recall", self.recall), ("ndcg", self.ndcg)):
            for k, v in table.items():
                out.append({"config": config, "group": "all", "K": k, "metric": metric, "value": v})
        for group, metrics in self.per_group.items():
            for metric, table in metrics.items():
                for k, v in table.items():
                    out.append({"config": config, "group": group, "K": k, "metric": metric, "value": v})
        return out


def _ranked_items(scores: np.ndarray, mask_items: np.ndarray, k: int) -> np.ndarray:
    """Top-k item ids by score, train items masked, ties broken by ascending id."""
    s = scores.astype(np.float64, copy=True)
    s[mask_items] = -np.inf
    order = np.lexsort((np.arange(len(s)), -s))
    order = order[np.isfinite(s[order])]  # masked items never padded back in
    return order[:k]


def topk_ranking(u: int, state: EmbeddingState, ds: InteractionDataset, k: int) -> np.ndarray:
    """Deterministic top-k recommendation list for user u (train items excluded)."""
    scores = state.item_emb @ state.user_emb[u]
    return _ranked_items(scores, ds.user_neighbors[u], k)


def recall_at_k(ranked: np.ndarray, test_items: np.ndarray, k: int) -> float:
    if len(test_items) == 0:
        raise ValueError("test_items must be non-empty")
    hits = np.intersect1d(ranked[:k], test_items).size
    return hits / len(test_items)


def ndcg_at_k(ranked: np.ndarray, test_items: np.ndarray, k: int) -> float:
    """Binary-gain DCG normalized by the ideal DCG of min(|test|, k) hits."""
    if len(test_items) == 0:
        raise ValueError("test_items must be non-empty")
    test_set = set(int(i) for i in test_items)
    dcg = sum(
        1.0 / np.log2(rank + 2) for rank, item in enumerate(ranked[:k]) if int(item) in test_set
    )
    ideal = sum(1.0 / np.log2(rank + 2) for rank in range(min(len(test_items), k)))
    return dcg / ideal


def evaluate(
    state: EmbeddingState,
    ds: InteractionDataset,
    ks: tuple[int, ...] = (10, 20),
    group_labels: np.ndarray | None = None,
    chunk: int = 256,
) -> EvalReport:
    """Mean per-user Recall/NDCG at each K over users with test interactions.

    ``group_labels`` (per-user ints into sparse/normal/popular) adds a
    per-group breakdown. Scoring is chunked dense matrix products.
    """
    t0 = time.perf_counter()
    kmax = max(ks)
    test_users = np.unique(ds.test[:, 0]) if len(ds.test) else np.empty(0, np.int64)
    # users need at least one train edge to be scored meaningfully
    test_users = np.array([u for u in test_users if len(ds.user_neighbors[u])], dtype=np.int64)
    test_items_by_user: dict[int, np.ndarray] = {}
    for u, i in ds.test:
        test_items_by_user.setdefault(int(u), []).append(int(i))  # type: ignore[arg-type]
    per_user: dict[int, dict[str, dict[int, float]]] = {}
    for start in range(0, len(test_users), chunk):
        block = test_users[start:start + chunk]
        scores = state.user_emb[block] @ state.item_emb.T
        for row, u in enumerate(block):
            ranked = _ranked_items(scores[row], ds.user_neighbors[u], kmax)
            t_items = np.asarray(test_items_by_user[int(u)])
            per_user[int(u)] = {
                "recall": {k: recall_at_k(ranked, t_items, k) for k in ks},
                "ndcg": {k: ndcg_at_k(ranked, t_items, k) for k in ks},
            }
    def _mean(users: np.ndarray, metric: str, k: int) -> float:
        vals = [per_user[int(u)][metric][k] for u in users]
        return float(np.mean(vals)) if vals else float("nan")

    report = EvalReport(
        recall={k: _mean(test_users, "recall", k) for k in ks},
        ndcg={k: _mean(test_users, "ndcg", k) for k in ks},
        users_evaluated=len(test_users),
    )
    if group_labels is not None:
        for g, name in enumerate(GROUP_NAMES):
            members = np.array([u for u in test_users if group_labels[u] == g], dtype=np.int64)
            report.per_group[name] = {
                "recall": {k: _mean(members, "recall", k) for k in ks},
                "ndcg": {k: _mean(members, "ndcg", k) for k in ks},
            }
    report.wall_time = time.perf_counter() - t0
    return report


def evaluate_with_groups(
    state: EmbeddingState,
    ds: InteractionDataset,
    ks: tuple[int, ...] = (10, 20),
    boundaries: tuple[int, int] | None = None,
) -> EvalReport:
    labels, _, _ = sparsity_groups(ds, boundaries)
    return evaluate(state, ds, ks, group_labels=labels)


def relative_degradation(clean: float, noisy: float) -> float:
    """Relative metric loss (clean - noisy) / clean under injected noise."""
    return (clean - noisy) / clean


def uniformity_diagnostic(
    embeddings: np.ndarray, sample_size: int = 512, seed: int = 0
) -> float:
    """Log mean Gaussian potential exp(-2 ||x - y||^2) over normalized row pairs.

    Lower means more uniformly spread on the hypersphere. Diagnostic only,
    never part of any training objective.
    """
    if sample_size < 2:
        raise ValueError("sample_size must be >= 2")
    rng = np.random.default_rng(seed)
    n = min(sample_size, embeddings.shape[0])
    rows = embeddings[rng.choice(embeddings.shape[0], size=n, replace=False)]
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    x = rows / norms
    sq = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(n, k=1)
    return float(np.log(np.mean(np.exp(-2.0 * sq[iu]))))


def timing_harness(run_fn, configs: list, warmup: bool = True) -> list[dict]:
    """Wall-clock per-config timing; ``run_fn(config)`` executes one epoch.

    The first call per config is discarded as warmup when requested.
    Returns one record per config: name, seconds_per_epoch.
    """
    rows = []
    for cfg in configs:
        if warmup:
            run_fn(cfg)
        t0 = time.perf_counter()
        run_fn(cfg)
        rows.append({"name": str(getattr(cfg, "name", cfg)), "seconds_per_epoch": time.perf_counter() - t0})
    return rows
