"""Command-line entry point: prepare, train, evaluate, grid, gradcheck, bench.

Every command is reproducible from its config file and seed alone; the fully
materialized config is copied into the output directory. Exit codes: 0 on
success, 1 on validation or assertion failure, 2 on I/O or config errors.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import shutil
import sys

import click
import numpy as np

from . import config as cfgmod
from . import data as D
from . import gradients as G
from . import losses as L
from . import report as R
from .evaluator import evaluate_with_groups
from .model import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, TrainingDiverged, run_grid, run_one_epoch, train

logger = logging.getLogger("lightccf")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_IO = 2


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    root = os.environ.get("LIGHTCCF_DATA_ROOT")
    if root:
        logger.info("LIGHTCCF_DATA_ROOT=%s", root)


@main.command()
@click.argument("raw_path", type=str)
@click.option("--format", "fmt", type=click.Choice(["pairs", "adjacency"]), default="pairs")
@click.option("--ratio", type=float, default=0.8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=str, required=True)
def prepare(raw_path: str, fmt: str, ratio: float, seed: int, out: str):
    """Ingest a raw interaction file, split per user, write the split + manifest."""
    root = os.environ.get("LIGHTCCF_DATA_ROOT")
    if root and not os.path.isabs(raw_path) and not os.path.exists(raw_path):
        raw_path = os.path.join(root, raw_path)
    if not os.path.exists(raw_path):
        _fail(EXIT_IO, f"input path does not exist: {raw_path}")
    try:
        edges, user_ids, item_ids, dups = D.load_interactions(raw_path, fmt)
        ds = D.split_per_user(edges, train_ratio=ratio, seed=seed,
                              user_ids=user_ids, item_ids=item_ids)
    except (D.MalformedLineError, ValueError) as exc:
        _fail(EXIT_FAIL, str(exc))
    D.save_dataset(ds, out)
    click.echo(
        f"users={ds.num_users} items={ds.num_items} train={ds.num_train} "
        f"test={ds.num_test} density={ds.density:.6f} duplicates={dups} seed={seed}"
    )


def _load_run_inputs(config_path: str, seed: int | None):
    cfg = cfgmod.load_config(config_path, overrides={"seed": seed})
    if not cfg["data"]:
        raise cfgmod.ConfigError("config must set 'data' to a prepared dataset directory")
    if not os.path.isdir(cfg["data"]):
        raise FileNotFoundError(f"dataset directory not found: {cfg['data']}")
    ds = D.load_dataset(cfg["data"])
    return cfg, ds


@main.command(name="train")
@click.option("--config", "config_path", type=str, required=True)
@click.option("--out", type=str, required=True)
@click.option("--seed", type=int, default=None, help="Override the config seed.")
def cmd_train(config_path: str, out: str, seed: int | None):
    """Train one run; write config copy, epoch log, report, and checkpoint."""
    try:
        cfg, ds = _load_run_inputs(config_path, seed)
        tcfg = cfgmod.to_train_config(cfg)
    except (cfgmod.ConfigError, FileNotFoundError, OSError) as exc:
        _fail(EXIT_IO, str(exc))
    os.makedirs(out, exist_ok=True)
    cfgmod.save_config(cfg, os.path.join(out, "config.yaml"))
    logger.info("train %s", cfgmod.describe(tcfg))
    try:
        state, record = train(ds, tcfg)
    except TrainingDiverged as exc:
        with open(os.path.join(out, "diagnostic.json"), "w") as fh:
            json.dump({"epoch": exc.epoch, "losses": exc.diagnostic}, fh)
        _fail(EXIT_FAIL, f"training diverged: {exc}")
    R.write_epoch_log(os.path.join(out, "epochs.jsonl"), record)
    R.render_training_curves(record, os.path.join(out, "training.png"))
    save_checkpoint(state, os.path.join(out, "checkpoint.bin"),
                    seed=tcfg.seed, similarity_kind=tcfg.loss.similarity)
    report = evaluate_with_groups(state, ds, tcfg.eval_ks)
    R.write_report(report, out, config_name=tcfg.objective)
    with open(os.path.join(out, "run.json"), "w") as fh:
        json.dump({"best_epoch": record.best_epoch, "best_metrics": record.best_metrics,
                   "total_wall_time": record.total_wall_time, "epochs_run": len(record.epochs)},
                  fh, indent=2)
    click.echo(R.summary_table(report))


@main.command(name="evaluate")
@click.option("--checkpoint", type=str, required=True)
@click.option("--data", type=str, required=True)
@click.option("--out", type=str, required=True)
@click.option("--ks", type=str, default="10,20", show_default=True)
def cmd_evaluate(checkpoint: str, data: str, out: str, ks: str):
    """Evaluate a checkpoint on a prepared dataset with group breakdown."""
    try:
        state, header = load_checkpoint(checkpoint)
        ds = D.load_dataset(data)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        _fail(EXIT_IO, str(exc))
    if state.num_users != ds.num_users or state.num_items != ds.num_items:
        _fail(EXIT_FAIL, "checkpoint shape does not match dataset")
    os.makedirs(out, exist_ok=True)
    report = evaluate_with_groups(state, ds, tuple(int(k) for k in ks.split(",")))
    R.write_report(report, out, config_name=os.path.basename(checkpoint))
    click.echo(R.summary_table(report))


@main.command(name="grid")
@click.option("--config", "config_path", type=str, required=True)
@click.option("--out", type=str, required=True)
@click.option("--seed", type=int, default=None)
@click.option("--workers", type=int, default=1, show_default=True)
def cmd_grid(config_path: str, out: str, seed: int | None, workers: int):
    """Sensitivity grid over (temperature, aggregation weight)."""
    try:
        cfg, ds = _load_run_inputs(config_path, seed)
        tcfg = cfgmod.to_train_config(cfg)
    except (cfgmod.ConfigError, FileNotFoundError, OSError) as exc:
        _fail(EXIT_IO, str(exc))
    os.makedirs(out, exist_ok=True)
    cfgmod.save_config(cfg, os.path.join(out, "config.yaml"))
    rows = run_grid(ds, tcfg, [float(t) for t in cfg["grid_taus"]],
                    [float(a) for a in cfg["grid_alphas"]], workers=workers)
    R.write_rows_csv(os.path.join(out, "grid.csv"), rows)
    R.render_grid_heatmap(rows, os.path.join(out, "grid_ndcg.png"))
    click.echo(f"{len(rows)} grid cells written to {out}/grid.csv")


GRADCHECK_TOL = 1e-6


@main.command(name="gradcheck")
@click.option("--out", type=str, default=None)
@click.option("--instances", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--corrupt", is_flag=True, hidden=True,
              help="Deliberately corrupt one gradient (negative control).")
def cmd_gradcheck(out: str | None, instances: int, seed: int, corrupt: bool):
    """Check every analytic gradient against central finite differences."""
    rng = np.random.default_rng(seed)
    lc = L.LossConfig(tau=0.25, alpha=0.7, beta=1e-3)
    rows = []
    failed = False
    for name in ("infonce", "bpr", "cl_ss", "cl_ui", "na", "joint"):
        worst = 0.0
        for _ in range(instances):
            worst = max(worst, _gradcheck_instance(name, lc, rng, corrupt=corrupt))
        ok = worst < GRADCHECK_TOL
        failed |= not ok
        rows.append({"loss": name, "instances": instances, "max_rel_error": worst,
                     "h": 1e-5, "pass": ok})
        click.echo(f"{name:8s} max_rel_error={worst:.3e} {'PASS' if ok else 'FAIL'}")
    if out:
        os.makedirs(out, exist_ok=True)
        R.write_rows_csv(os.path.join(out, "gradcheck.csv"), rows)
    sys.exit(EXIT_FAIL if failed else EXIT_OK)


def _gradcheck_instance(name: str, lc: L.LossConfig, rng: np.random.Generator,
                        corrupt: bool = False) -> float:
    """One randomized small instance; returns the max relative FD error."""
    m, n, d = 8, 10, 4
    user_emb = rng.normal(size=(m, d))
    item_emb = rng.normal(size=(n, d))
    b = 5
    users = rng.integers(m, size=b)
    pos = rng.integers(n, size=b)
    neg = rng.integers(n, size=b)
    if name == "infonce":
        negs = item_emb[np.unique(pos)]
        def loss_fn(u, i):
            return L.infonce(u[users[0]], i[pos[0]], i[np.unique(pos)], lc.tau, lc.similarity)
        ga, gp, gn = G.infonce_grad(user_emb[users[0]], item_emb[pos[0]], negs,
                                    lc.tau, lc.similarity)
        acc = G.GradAccumulator(d)
        acc.add("user", [users[0]], ga[None, :])
        acc.add("item", [pos[0]], gp[None, :])
        acc.add("item", np.unique(pos), gn)
        touched_u, touched_i = np.array([users[0]]), np.unique(np.append(pos, pos[0]))
    elif name == "bpr":
        def loss_fn(u, i):
            return L.bpr_loss(users, pos, neg, u, i)
        acc = G.bpr_grad(users, pos, neg, user_emb, item_emb)
        touched_u, touched_i = L.touched_rows(users, pos, neg)
    elif name == "cl_ss":
        uu, ii = np.unique(users), np.unique(pos)
        def loss_fn(u, i):
            return L.cl_ss_loss(uu, ii, u, i, lc.tau, lc.similarity)
        acc = G.cl_ss_grad(uu, ii, user_emb, item_emb, lc.tau, lc.similarity)
        touched_u, touched_i = uu, ii
    elif name == "cl_ui":
        def loss_fn(u, i):
            return L.cl_ui_loss(users, pos, u, i, lc.tau, lc.similarity)
        acc = G.cl_ui_grad(users, pos, user_emb, item_emb, lc.tau, lc.similarity)
        touched_u, touched_i = np.unique(users), np.unique(pos)
    elif name == "na":
        users = np.arange(b) % m  # distinct users so every pair has negatives
        def loss_fn(u, i):
            return L.na_loss(users, pos, u, i, lc)
        acc = G.na_grad(users, pos, user_emb, item_emb, lc)
        touched_u, touched_i = np.unique(users), np.unique(pos)
    else:  # joint
        users = np.arange(b) % m
        def loss_fn(u, i):
            return L.joint_loss(users, pos, neg, u, i, lc)[0]
        acc = G.joint_grad(users, pos, neg, user_emb, item_emb, lc)
        touched_u, touched_i = L.touched_rows(users, pos, neg)
    numeric = G.finite_difference_oracle(loss_fn, user_emb, item_emb,
                                         user_rows=touched_u, item_rows=touched_i)
    analytic = acc.as_dict()
    if corrupt:
        key = next(iter(analytic))
        analytic[key] = analytic[key] + 0.1
    return G.max_relative_error(analytic, numeric)


@main.command(name="bench")
@click.option("--config", "config_path", type=str, required=True)
@click.option("--out", type=str, required=True)
def cmd_bench(config_path: str, out: str):
    """Per-objective seconds-per-epoch timing on the configured dataset."""
    try:
        cfg, ds = _load_run_inputs(config_path, None)
        tcfg = cfgmod.to_train_config(cfg)
    except (cfgmod.ConfigError, FileNotFoundError, OSError) as exc:
        _fail(EXIT_IO, str(exc))
    os.makedirs(out, exist_ok=True)
    rows = []
    for objective in ("bpr_only", "cl_ui", "lightccf"):
        bench_cfg = dataclasses.replace(tcfg, objective=objective)
        run_one_epoch(ds, bench_cfg)  # warmup
        rows.append({"name": objective, "seconds_per_epoch": run_one_epoch(ds, bench_cfg)})
    R.write_rows_csv(os.path.join(out, "bench.csv"), rows)
    R.render_timing_bars(rows, os.path.join(out, "bench.png"))
    for r in rows:
        click.echo(f"{r['name']:10s} {r['seconds_per_epoch']:.3f} s/epoch")


if __name__ == "__main__":
    main()
