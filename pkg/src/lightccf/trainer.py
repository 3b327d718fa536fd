"""Multi-task training loop: objectives, optimizers, early stopping, grids.

Supported objectives:
  bpr_only  - pairwise ranking loss alone (matrix-factorization baseline)
  cl_ss     - ranking loss + self-sample contrastive auxiliary
  cl_ui     - ranking loss + user-item contrastive auxiliary
  lightccf  - ranking loss + neighborhood-aggregation auxiliary

With encoder_layers > 0 the embeddings are propagated through the normalized
adjacency before every loss, gradients flow back through the (symmetric) linear
propagation, and ranking also uses propagated embeddings.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from . import gradients as G
from . import losses as L
from .data import InteractionDataset
from .evaluator import EvalReport, evaluate
from .graph import NormalizedAdjacency, PropagationConfig, build_normalized_adjacency, propagate
from .model import EmbeddingState, init_xavier
from .sampler import Batch, epoch_batches

OBJECTIVES = ("bpr_only", "cl_ss", "cl_ui", "lightccf")


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss or parameter is detected."""

    def __init__(self, epoch: int, diagnostic: dict):
        super().__init__(f"non-finite values at epoch {epoch}: {diagnostic}")
        self.epoch = epoch
        self.diagnostic = diagnostic


@dataclass
class TrainConfig:
    objective: str = "lightccf"
    encoder_layers: int = 0
    dim: int = 64
    lr: float = 1e-3
    epochs: int = 200
    patience: int = 10  # evaluations without improvement before stopping
    eval_interval: int = 5
    optimizer: str = "adam"
    batch_size: int = 2048
    seed: int = 0
    loss: L.LossConfig = field(default_factory=L.LossConfig)
    eval_ks: tuple[int, ...] = (10, 20)
    early_metric_k: int = 20  # early stopping watches NDCG at this K

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d


@dataclass
class RunRecord:
    """Per-epoch loss/metric trail plus the best checkpoint bookkeeping."""

    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_metrics: dict = field(default_factory=dict)
    total_wall_time: float = 0.0
    config: dict = field(default_factory=dict)


class Adam:
    """Adam with lazy per-row updates and a global step counter."""

    def __init__(self, state: EmbeddingState, lr: float, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {"user": np.zeros_like(state.user_emb), "item": np.zeros_like(state.item_emb)}
        self.v = {"user": np.zeros_like(state.user_emb), "item": np.zeros_like(state.item_emb)}

    def step(self, state: EmbeddingState, acc: G.GradAccumulator) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for table, arr in (("user", state.user_emb), ("item", state.item_emb)):
            rows, g = acc.compact(table)
            if len(rows) == 0:
                continue
            m = self.m[table][rows] = self.b1 * self.m[table][rows] + (1 - self.b1) * g
            v = self.v[table][rows] = self.b2 * self.v[table][rows] + (1 - self.b2) * g * g
            arr[rows] -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class SGD:
    """Plain gradient descent on the touched rows."""

    def __init__(self, state: EmbeddingState, lr: float):
        self.lr = lr

    def step(self, state: EmbeddingState, acc: G.GradAccumulator) -> None:
        for table, arr in (("user", state.user_emb), ("item", state.item_emb)):
            rows, g = acc.compact(table)
            if len(rows):
                np.subtract.at(arr, rows, self.lr * g)


def propagation_backprop(
    grad_user: np.ndarray,
    grad_item: np.ndarray,
    adj: NormalizedAdjacency,
    pcfg: PropagationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Chain rule through the linear propagation encoder.

    The propagation operator is symmetric, so its transpose is itself and the
    backward pass is the same weighted power sum applied to the upstream
    gradients. L=0 is an identity pass-through (times the layer-0 weight).
    """
    return propagate(grad_user, grad_item, adj, pcfg)


def _batch_grad(
    batch: Batch,
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    cfg: TrainConfig,
) -> tuple[G.GradAccumulator, dict[str, float]]:
    """Gradient of the configured objective w.r.t. the tables the losses see.

    Regularization is excluded here; it applies to the base tables and is
    added by the caller.
    """
    lc = cfg.loss
    acc = G.bpr_grad(batch.users, batch.pos_items, batch.neg_items, user_emb, item_emb)
    terms = {"bpr": L.bpr_loss(batch.users, batch.pos_items, batch.neg_items, user_emb, item_emb)}
    aux = 0.0
    if cfg.objective == "lightccf" and lc.alpha > 0:
        acc.add_scaled(G.na_grad(batch.users, batch.pos_items, user_emb, item_emb, lc), lc.alpha)
        aux = L.na_loss(batch.users, batch.pos_items, user_emb, item_emb, lc)
    elif cfg.objective == "cl_ss" and lc.alpha > 0:
        uu = np.unique(batch.users)
        ii = np.unique(batch.pos_items)
        acc.add_scaled(G.cl_ss_grad(uu, ii, user_emb, item_emb, lc.tau, lc.similarity), lc.alpha)
        aux = L.cl_ss_loss(uu, ii, user_emb, item_emb, lc.tau, lc.similarity)
    elif cfg.objective == "cl_ui" and lc.alpha > 0:
        acc.add_scaled(
            G.cl_ui_grad(batch.users, batch.pos_items, user_emb, item_emb, lc.tau, lc.similarity),
            lc.alpha,
        )
        aux = L.cl_ui_loss(batch.users, batch.pos_items, user_emb, item_emb, lc.tau, lc.similarity)
    terms["aux"] = aux
    return acc, terms


def inference_state(
    state: EmbeddingState,
    adj: NormalizedAdjacency | None,
    pcfg: PropagationConfig | None,
) -> EmbeddingState:
    """Embeddings used for scoring: propagated when an encoder is configured."""
    if adj is None or pcfg is None or pcfg.num_layers == 0:
        return state
    u, i = propagate(state.user_emb, state.item_emb, adj, pcfg)
    return EmbeddingState(u, i)


def train(
    ds: InteractionDataset,
    cfg: TrainConfig,
    epoch_callback=None,
) -> tuple[EmbeddingState, RunRecord]:
    """Optimize the configured objective; return the best checkpoint and trail.

    Evaluates every ``eval_interval`` epochs on the held-out split and stops
    after ``patience`` evaluations without NDCG improvement at
    ``early_metric_k``. Deterministic given (dataset, config).
    """
    state = init_xavier(ds.num_users, ds.num_items, cfg.dim, cfg.seed)
    adj = pcfg = None
    if cfg.encoder_layers > 0:
        adj = build_normalized_adjacency(ds)
        pcfg = PropagationConfig(num_layers=cfg.encoder_layers)
    opt = Adam(state, cfg.lr) if cfg.optimizer == "adam" else SGD(state, cfg.lr)
    record = RunRecord(config=cfg.to_dict())
    best_state = state.copy()
    best_metric = -np.inf
    bad_evals = 0
    t_start = time.perf_counter()
    for epoch in range(cfg.epochs):
        t_epoch = time.perf_counter()
        sums = {"bpr": 0.0, "aux": 0.0, "reg": 0.0}
        n_batches = 0
        for batch in epoch_batches(ds, cfg.batch_size, cfg.seed, epoch):
            if adj is not None and pcfg is not None:
                pu, pi = propagate(state.user_emb, state.item_emb, adj, pcfg)
                acc, terms = _batch_grad(batch, pu, pi, cfg)
                du, di = acc.to_dense(ds.num_users, ds.num_items)
                du, di = propagation_backprop(du, di, adj, pcfg)
                acc = G.GradAccumulator(cfg.dim)
                acc.add("user", np.arange(ds.num_users), du)
                acc.add("item", np.arange(ds.num_items), di)
            else:
                acc, terms = _batch_grad(batch, state.user_emb, state.item_emb, cfg)
            if cfg.loss.beta > 0:
                G.add_l2_grad(acc, batch.users, batch.pos_items, batch.neg_items,
                              state.user_emb, state.item_emb, cfg.loss)
            terms["reg"] = L.l2_penalty(batch.users, batch.pos_items, batch.neg_items,
                                        state.user_emb, state.item_emb, cfg.loss.full_reg)
            opt.step(state, acc)
            for k in sums:
                sums[k] += terms[k]
            n_batches += 1
        if not state.all_finite() or not all(np.isfinite(v) for v in sums.values()):
            raise TrainingDiverged(epoch, {k: v / max(n_batches, 1) for k, v in sums.items()})
        entry = {
            "epoch": epoch,
            "loss_bpr": sums["bpr"] / n_batches,
            "loss_aux": sums["aux"] / n_batches,
            "loss_reg": sums["reg"] / n_batches,
            "loss_total": (sums["bpr"] + cfg.loss.alpha * sums["aux"]
                           + cfg.loss.beta * sums["reg"]) / n_batches,
            "wall_time": time.perf_counter() - t_epoch,
        }
        if (epoch + 1) % cfg.eval_interval == 0:
            report = evaluate(inference_state(state, adj, pcfg), ds, cfg.eval_ks)
            entry["recall"] = dict(report.recall)
            entry["ndcg"] = dict(report.ndcg)
            metric = report.ndcg[cfg.early_metric_k]
            if metric > best_metric:
                best_metric = metric
                best_state = state.copy()
                record.best_epoch = epoch
                record.best_metrics = {"recall": dict(report.recall), "ndcg": dict(report.ndcg)}
                bad_evals = 0
            else:
                bad_evals += 1
        record.epochs.append(entry)
        if epoch_callback is not None:
            epoch_callback(entry)
        if bad_evals >= cfg.patience:
            break
    if record.best_epoch < 0:  # no evaluation happened; keep the final state
        best_state = state.copy()
        report = evaluate(inference_state(state, adj, pcfg), ds, cfg.eval_ks)
        record.best_epoch = len(record.epochs) - 1
        record.best_metrics = {"recall": dict(report.recall), "ndcg": dict(report.ndcg)}
    record.total_wall_time = time.perf_counter() - t_start
    return inference_state(best_state, adj, pcfg), record


def run_one_epoch(ds: InteractionDataset, cfg: TrainConfig, epoch: int = 0) -> float:
    """Single training epoch from a fresh init; returns its wall time (timing use)."""
    state = init_xavier(ds.num_users, ds.num_items, cfg.dim, cfg.seed)
    opt = Adam(state, cfg.lr) if cfg.optimizer == "adam" else SGD(state, cfg.lr)
    t0 = time.perf_counter()
    for batch in epoch_batches(ds, cfg.batch_size, cfg.seed, epoch):
        acc, _ = _batch_grad(batch, state.user_emb, state.item_emb, cfg)
        if cfg.loss.beta > 0:
            G.add_l2_grad(acc, batch.users, batch.pos_items, batch.neg_items,
                          state.user_emb, state.item_emb, cfg.loss)
        opt.step(state, acc)
    return time.perf_counter() - t0


def _grid_cell(args):
    ds, cfg, tau, alpha = args
    cell_cfg = dataclasses.replace(
        cfg, loss=dataclasses.replace(cfg.loss, tau=tau, alpha=alpha)
    )
    _, record = train(ds, cell_cfg)
    row = {"tau": tau, "alpha": alpha, "epochs_run": len(record.epochs)}
    for k, v in record.best_metrics.get("recall", {}).items():
        row[f"recall@{k}"] = v
    for k, v in record.best_metrics.get("ndcg", {}).items():
        row[f"ndcg@{k}"] = v
    return row


def run_grid(
    ds: InteractionDataset,
    cfg: TrainConfig,
    taus: list[float],
    alphas: list[float],
    workers: int = 1,
) -> list[dict]:
    """Train every (tau, alpha) cell with a shared seed; one metric row per cell."""
    cells = [(ds, cfg, t, a) for t in taus for a in alphas]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_grid_cell, cells))
    return [_grid_cell(c) for c in cells]
