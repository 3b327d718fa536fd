"""Interaction data: ingestion, deduplication, per-user splitting, neighbor structure.

Raw ids are arbitrary strings; they are compacted to dense integer indices in
first-seen order and the mapping is kept alongside the dataset so splits can be
traced back to the original files.
"""

from __future__ import annotations

import gzip
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class MalformedLineError(ValueError):
    """A line in an interaction file did not parse under the declared format."""

    def __init__(self, path: str, line_no: int, line: str):
        super().__init__(f"{path}:{line_no}: malformed line {line!r}")
        self.line_no = line_no


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int


@dataclass
class InteractionDataset:
    """Deduplicated implicit-feedback interactions with a train/test split.

    ``train`` and ``test`` are (E, 2) int64 arrays of (user, item) rows.
    Neighbor lists are sorted and derived from the train split only.
    Immutable by convention after construction.
    """

    num_users: int
    num_items: int
    train: np.ndarray
    test: np.ndarray
    user_neighbors: list[np.ndarray]
    item_neighbors: list[np.ndarray]
    density: float
    user_ids: list[str] = field(default_factory=list)
    item_ids: list[str] = field(default_factory=list)
    noise_flags: np.ndarray | None = None  # per-train-edge audit flags
    dropped_test_users: int = 0
    split_seed: int | None = None

    @property
    def num_train(self) -> int:
        return len(self.train)

    @property
    def num_test(self) -> int:
        return len(self.test)

    def train_degree(self, u: int) -> int:
        return len(self.user_neighbors[u])

    def user_item_set(self, u: int) -> np.ndarray:
        """Sorted train items of user u."""
        return self.user_neighbors[u]

    def has_train_edge(self, u: int, i: int) -> bool:
        nb = self.user_neighbors[u]
        k = np.searchsorted(nb, i)
        return k < len(nb) and nb[k] == i


def _open_text(path: str):
    if path.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8")
    return open(path, "r", encoding="utf-8")


def load_interactions(path: str, fmt: str = "pairs"):
    """Parse a raw interaction file into a deduplicated edge list.

    fmt="pairs": one whitespace-separated "user item" per line.
    fmt="adjacency": "user item1 item2 ..." per line.

    Returns (edges, user_ids, item_ids, num_duplicates) where ``edges`` is an
    (E, 2) int64 array over compacted indices (first-seen order).
    """
    if fmt not in ("pairs", "adjacency"):
        raise ValueError(f"unknown format {fmt!r}")
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    seen: set[tuple[int, int]] = set()
    edges: list[tuple[int, int]] = []
    duplicates = 0
    n_lines = 0
    with _open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            n_lines += 1
            if fmt == "pairs" and len(tokens) != 2:
                raise MalformedLineError(path, line_no, line.rstrip("\n"))
            if fmt == "adjacency" and len(tokens) < 2:
                raise MalformedLineError(path, line_no, line.rstrip("\n"))
            u_raw, item_tokens = tokens[0], tokens[1:]
            u = user_index.setdefault(u_raw, len(user_index))
            for it_raw in item_tokens:
                i = item_index.setdefault(it_raw, len(item_index))
                if (u, i) in seen:
                    duplicates += 1
                    continue
                seen.add((u, i))
                edges.append((u, i))
    if n_lines == 0:
        raise ValueError(f"{path}: empty interaction file")
    if duplicates:
        logger.warning("%s: dropped %d duplicate interactions", path, duplicates)
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    return arr, list(user_index), list(item_index), duplicates


def _neighbor_lists(edges: np.ndarray, num_users: int, num_items: int):
    user_nb: list[np.ndarray] = [None] * num_users  # type: ignore[list-item]
    item_nb: list[np.ndarray] = [None] * num_items  # type: ignore[list-item]
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    se = edges[order]
    bounds = np.searchsorted(se[:, 0], np.arange(num_users + 1))
    for u in range(num_users):
        user_nb[u] = se[bounds[u]:bounds[u + 1], 1].copy()
    order = np.lexsort((edges[:, 0], edges[:, 1]))
    se = edges[order]
    bounds = np.searchsorted(se[:, 1], np.arange(num_items + 1))
    for i in range(num_items):
        item_nb[i] = se[bounds[i]:bounds[i + 1], 0].copy()
    return user_nb, item_nb


def assemble_dataset(
    num_users: int,
    num_items: int,
    train: np.ndarray,
    test: np.ndarray,
    user_ids: list[str] | None = None,
    item_ids: list[str] | None = None,
    noise_flags: np.ndarray | None = None,
    split_seed: int | None = None,
    dropped_test_users: int = 0,
) -> InteractionDataset:
    """Construct an InteractionDataset from split edge arrays."""
    train = np.asarray(train, dtype=np.int64).reshape(-1, 2)
    test = np.asarray(test, dtype=np.int64).reshape(-1, 2)
    all_edges = {(int(u), int(i)) for u, i in train} | {(int(u), int(i)) for u, i in test}
    density = len(all_edges) / (num_users * num_items) if num_users and num_items else 0.0
    user_nb, item_nb = _neighbor_lists(train, num_users, num_items)
    return InteractionDataset(
        num_users=num_users,
        num_items=num_items,
        train=train,
        test=test,
        user_neighbors=user_nb,
        item_neighbors=item_nb,
        density=density,
        user_ids=user_ids or [],
        item_ids=item_ids or [],
        noise_flags=noise_flags,
        split_seed=split_seed,
        dropped_test_users=dropped_test_users,
    )


def split_per_user(
    edges: np.ndarray,
    train_ratio: float = 0.8,
    seed: int = 0,
    user_ids: list[str] | None = None,
    item_ids: list[str] | None = None,
) -> InteractionDataset:
    """Split each user's interactions independently at ``train_ratio``.

    Users with a single interaction go entirely to train. Deterministic for a
    fixed (edges, train_ratio, seed).
    """
    if not (0.0 < train_ratio < 1.0):
        raise ValueError("train_ratio must lie in (0, 1)")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    num_users = int(edges[:, 0].max()) + 1 if len(edges) else 0
    num_items = int(edges[:, 1].max()) + 1 if len(edges) else 0
    rng = np.random.default_rng(seed)
    train_parts: list[np.ndarray] = []
    test_parts: list[np.ndarray] = []
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    se = edges[order]
    bounds = np.searchsorted(se[:, 0], np.arange(num_users + 1))
    for u in range(num_users):
        items = se[bounds[u]:bounds[u + 1], 1]
        n = len(items)
        if n == 0:
            continue
        perm = rng.permutation(n)
        n_train = max(1, int(np.floor(n * train_ratio)))
        keep = items[perm[:n_train]]
        hold = items[perm[n_train:]]
        train_parts.append(np.column_stack([np.full(len(keep), u), keep]))
        if len(hold):
            test_parts.append(np.column_stack([np.full(len(hold), u), hold]))
    train = np.concatenate(train_parts) if train_parts else np.empty((0, 2), np.int64)
    test = np.concatenate(test_parts) if test_parts else np.empty((0, 2), np.int64)
    return assemble_dataset(
        num_users, num_items, train, test,
        user_ids=user_ids, item_ids=item_ids, split_seed=seed,
    )


GROUP_NAMES = ("sparse", "normal", "popular")


def sparsity_groups(ds: InteractionDataset, boundaries: tuple[int, int] | None = None):
    """Label each user sparse/normal/popular by train-interaction count.

    Default boundaries are the tertiles of the per-user train counts
    (dataset-relative); explicit boundaries must be strictly increasing.
    Returns (labels, boundaries, group_sizes).
    """
    counts = np.array([len(nb) for nb in ds.user_neighbors])
    if boundaries is None:
        lo, hi = np.quantile(counts, [1 / 3, 2 / 3])
        boundaries = (int(np.ceil(lo)), int(np.ceil(hi)))
    lo, hi = boundaries
    if not lo < hi:
        raise ValueError("boundaries must be strictly increasing")
    labels = np.where(counts < lo, 0, np.where(counts < hi, 1, 2))
    sizes = {GROUP_NAMES[g]: int((labels == g).sum()) for g in range(3)}
    return labels, boundaries, sizes


def inject_noise(ds: InteractionDataset, ratio: float, seed: int = 0) -> InteractionDataset:
    """Add round(ratio * |train|) fake train edges drawn uniformly from empty cells.

    The test split is untouched; injected edges are flagged in ``noise_flags``.
    """
    if ratio < 0:
        raise ValueError("ratio must be nonnegative")
    n_noise = int(round(ratio * ds.num_train))
    if n_noise == 0:
        return ds
    occupied = {(int(u), int(i)) for u, i in ds.train}
    occupied |= {(int(u), int(i)) for u, i in ds.test}
    n_cells = ds.num_users * ds.num_items
    if n_cells - len(occupied) < n_noise:
        raise ValueError("not enough empty cells to inject the requested noise")
    rng = np.random.default_rng(seed)
    fake: list[tuple[int, int]] = []
    while len(fake) < n_noise:
        u = int(rng.integers(ds.num_users))
        i = int(rng.integers(ds.num_items))
        if (u, i) in occupied:
            continue
        occupied.add((u, i))
        fake.append((u, i))
    train = np.concatenate([ds.train, np.asarray(fake, dtype=np.int64)])
    flags = np.zeros(len(train), dtype=bool)
    flags[ds.num_train:] = True
    return assemble_dataset(
        ds.num_users, ds.num_items, train, ds.test,
        user_ids=ds.user_ids, item_ids=ds.item_ids,
        noise_flags=flags, split_seed=ds.split_seed,
    )


# ---------------------------------------------------------------- persistence

def save_dataset(ds: InteractionDataset, outdir: str) -> None:
    """Write the split, id mapping, and a manifest under ``outdir``."""
    os.makedirs(outdir, exist_ok=True)
    np.savetxt(os.path.join(outdir, "train.tsv"), ds.train, fmt="%d", delimiter="\t")
    np.savetxt(os.path.join(outdir, "test.tsv"), ds.test, fmt="%d", delimiter="\t")
    if ds.user_ids:
        with open(os.path.join(outdir, "users.txt"), "w") as fh:
            fh.write("\n".join(ds.user_ids) + "\n")
    if ds.item_ids:
        with open(os.path.join(outdir, "items.txt"), "w") as fh:
            fh.write("\n".join(ds.item_ids) + "\n")
    manifest = {
        "num_users": ds.num_users,
        "num_items": ds.num_items,
        "num_train": ds.num_train,
        "num_test": ds.num_test,
        "density": ds.density,
        "split_seed": ds.split_seed,
        "dropped_test_users": ds.dropped_test_users,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(indir: str) -> InteractionDataset:
    with open(os.path.join(indir, "manifest.json")) as fh:
        manifest = json.load(fh)
    train = np.loadtxt(os.path.join(indir, "train.tsv"), dtype=np.int64, ndmin=2)
    test_path = os.path.join(indir, "test.tsv")
    test = np.loadtxt(test_path, dtype=np.int64, ndmin=2) if os.path.getsize(test_path) else np.empty((0, 2), np.int64)
    user_ids: list[str] = []
    item_ids: list[str] = []
    for name, dest in (("users.txt", user_ids), ("items.txt", item_ids)):
        p = os.path.join(indir, name)
        if os.path.exists(p):
            with open(p) as fh:
                dest.extend(line.rstrip("\n") for line in fh if line.strip())
    return assemble_dataset(
        manifest["num_users"], manifest["num_items"], train, test,
        user_ids=user_ids, item_ids=item_ids,
        split_seed=manifest.get("split_seed"),
        dropped_test_users=manifest.get("dropped_test_users", 0),
    )


# ----------------------------------------------------------------- synthetic

def synthetic_interactions(
    num_users: int = 300,
    num_items: int = 400,
    latent_dim: int = 8,
    min_degree: int = 6,
    max_degree: int = 60,
    seed: int = 0,
) -> np.ndarray:
    """Generate a low-rank synthetic edge list for small-scale experiments.

    Users and items get latent vectors; each user interacts with items sampled
    by softmax affinity, with a skewed per-user degree so sparsity groups are
    non-trivial. Returns an (E, 2) int64 edge array.
    """
    rng = np.random.default_rng(seed)
    uvec = rng.normal(size=(num_users, latent_dim))
    ivec = rng.normal(size=(num_items, latent_dim))
    scores = uvec @ ivec.T
    edges: list[np.ndarray] = []
    degrees = np.clip(
        rng.lognormal(mean=np.log(min_degree * 2), sigma=0.7, size=num_users).astype(int),
        min_degree, min(max_degree, num_items),
    )
    for u in range(num_users):
        logits = scores[u] / 0.7
        p = np.exp(logits - logits.max())
        p /= p.sum()
        items = rng.choice(num_items, size=degrees[u], replace=False, p=p)
        edges.append(np.column_stack([np.full(len(items), u), np.sort(items)]))
    return np.concatenate(edges).astype(np.int64)


def clustered_interactions(
    num_users: int = 1500,
    num_items: int = 2000,
    num_clusters: int = 50,
    in_cluster_p: float = 0.9,
    min_degree: int = 5,
    max_degree: int = 9,
    seed: int = 7,
) -> np.ndarray:
    """Generate cold-start-style interactions with latent item clusters.

    Items are partitioned into clusters; each user picks one cluster and a
    small interaction budget, drawing mostly in-cluster items plus a little
    uniform noise. Per-user histories are short, so generalizing to a user's
    held-out items requires sharing signal across users of the same cluster.
    Returns an (E, 2) int64 edge array.
    """
    rng = np.random.default_rng(seed)
    item_cluster = np.repeat(np.arange(num_clusters), -(-num_items // num_clusters))[:num_items]
    rng.shuffle(item_cluster)
    edges: list[np.ndarray] = []
    for u in range(num_users):
        c = rng.integers(num_clusters)
        degree = int(rng.integers(min_degree, max_degree + 1))
        own = np.flatnonzero(item_cluster == c)
        other = np.flatnonzero(item_cluster != c)
        n_in = min(int((rng.random(degree) < in_cluster_p).sum()), len(own))
        items = np.concatenate([
            rng.choice(own, size=n_in, replace=False),
            rng.choice(other, size=degree - n_in, replace=False),
        ])
        edges.append(np.column_stack([np.full(len(items), u), np.unique(items)]))
    return np.concatenate(edges).astype(np.int64)
