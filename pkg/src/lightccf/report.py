"""Run reporting: delimited metric records plus rendered matplotlib figures.

Every report path writes machine-readable delimited output first and renders
the matching figures next to it; figures are a convenience view of the same
records, never the only output.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluator import EvalReport
from .trainer import RunRecord


def write_rows_csv(path: str, rows: list[dict]) -> None:
    """Write homogeneous record dicts as CSV (header from the union of keys)."""
    if not rows:
        raise ValueError("no rows to write")
    keys: list[str] = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        writer.writerows(rows)


def write_epoch_log(path: str, record: RunRecord) -> None:
    """Append-only JSONL trail, one record per epoch."""
    with open(path, "w") as fh:
        for entry in record.epochs:
            fh.write(json.dumps(entry) + "\n")


def summary_table(report: EvalReport) -> str:
    """Plain-text metric summary for standard output."""
    lines = [f"users evaluated: {report.users_evaluated}"]
    for k in sorted(report.recall):
        lines.append(f"Recall@{k:<3d} {report.recall[k]:.4f}   NDCG@{k:<3d} {report.ndcg[k]:.4f}")
    for group, metrics in report.per_group.items():
        for k in sorted(metrics["recall"]):
            lines.append(
                f"[{group}] Recall@{k:<3d} {metrics['recall'][k]:.4f}   "
                f"NDCG@{k:<3d} {metrics['ndcg'][k]:.4f}"
            )
    return "\n".join(lines)


def render_training_curves(record: RunRecord, path: str) -> None:
    """Loss components and held-out NDCG over epochs."""
    epochs = [e["epoch"] for e in record.epochs]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key, label in (("loss_bpr", "ranking"), ("loss_aux", "auxiliary"), ("loss_total", "total")):
        ax1.plot(epochs, [e[key] for e in record.epochs], label=label)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    eval_epochs = [e["epoch"] for e in record.epochs if "ndcg" in e]
    if eval_epochs:
        ks = sorted(next(e for e in record.epochs if "ndcg" in e)["ndcg"])
        for k in ks:
            ax2.plot(eval_epochs, [e["ndcg"][k] for e in record.epochs if "ndcg" in e],
                     marker="o", ms=3, label=f"NDCG@{k}")
        ax2.set_xlabel("epoch")
        ax2.set_ylabel("NDCG")
        ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_group_bars(report: EvalReport, path: str, k: int | None = None) -> None:
    """Per-sparsity-group NDCG bars (largest reported K by default)."""
    groups = list(report.per_group)
    if k is None:
        k = max(report.ndcg)
    vals = [report.per_group[g]["ndcg"][k] for g in groups]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(groups, vals, color=["#4c72b0", "#dd8452", "#55a868"])
    ax.set_ylabel(f"NDCG@{k}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_grid_heatmap(rows: list[dict], path: str, metric: str = "ndcg@20") -> None:
    """Sensitivity heatmap over the (tau, alpha) grid."""
    taus = sorted({r["tau"] for r in rows})
    alphas = sorted({r["alpha"] for r in rows})
    z = np.full((len(alphas), len(taus)), np.nan)
    for r in rows:
        z[alphas.index(r["alpha"]), taus.index(r["tau"])] = r.get(metric, np.nan)
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(z, origin="lower", aspect="auto", cmap="viridis")
    ax.set_xticks(range(len(taus)), [f"{t:g}" for t in taus])
    ax.set_yticks(range(len(alphas)), [f"{a:g}" for a in alphas])
    ax.set_xlabel("temperature")
    ax.set_ylabel("aggregation weight")
    fig.colorbar(im, ax=ax, label=metric)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_noise_degradation(rows: list[dict], path: str, metric: str = "ndcg@20") -> None:
    """Metric vs injected-noise ratio, one line per method."""
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for method in methods:
        pts = sorted((r["noise_ratio"], r[metric]) for r in rows if r["method"] == method)
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=method)
    ax.set_xlabel("noise ratio")
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_timing_bars(rows: list[dict], path: str) -> None:
    names = [r["name"] for r in rows]
    secs = [r["seconds_per_epoch"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4.0, 1.1 * len(names)), 3.2))
    ax.bar(names, secs, color="#4c72b0")
    ax.set_ylabel("seconds / epoch")
    ax.tick_params(axis="x", rotation=30)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def write_report(report: EvalReport, outdir: str, config_name: str = "run") -> None:
    """Delimited long-format records plus the group figure when available."""
    os.makedirs(outdir, exist_ok=True)
    write_rows_csv(os.path.join(outdir, "metrics.csv"), report.rows(config_name))
    if report.per_group:
        render_group_bars(report, os.path.join(outdir, "group_ndcg.png"))
