"""Mini-batch sampling: shuffled positive pairs plus uniform BPR negatives.

The epoch stream is a pure function of (dataset, batch_size, seed, epoch); each
batch gets an independently seeded RNG stream so batches can be produced ahead
of consumption without changing results.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .data import InteractionDataset

MAX_REJECTIONS = 32


@dataclass
class Batch:
    """Aligned (user, positive item, negative item) triplets."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    @property
    def size(self) -> int:
        return len(self.users)


def sample_negative(u: int, ds: InteractionDataset, rng: np.random.Generator) -> int:
    """Uniform draw over the items user u has not interacted with (train split).

    Rejection sampling with a bounded attempt count, falling back to an
    explicit complement draw for near-saturated users.
    """
    nb = ds.user_neighbors[u]
    if len(nb) >= ds.num_items:
        raise ValueError(f"user {u} interacted with every item; no negative exists")
    for _ in range(MAX_REJECTIONS):
        i = int(rng.integers(ds.num_items))
        k = np.searchsorted(nb, i)
        if k >= len(nb) or nb[k] != i:
            return i
    complement = np.setdiff1d(np.arange(ds.num_items), nb, assume_unique=True)
    return int(rng.choice(complement))


def _sample_negatives(users: np.ndarray, ds: InteractionDataset, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(len(users), dtype=np.int64)
    for k, u in enumerate(users):
        out[k] = sample_negative(int(u), ds, rng)
    return out


def epoch_batches(
    ds: InteractionDataset,
    batch_size: int,
    seed: int,
    epoch: int,
) -> Iterator[Batch]:
    """Deterministic stream of batches covering every train edge once as a positive.

    A trailing batch shorter than 2 pairs is merged into its predecessor so the
    in-batch contrastive losses always have negatives.
    """
    if batch_size < 2:
        raise ValueError("batch_size must be >= 2")
    order_rng = np.random.default_rng([seed, epoch])
    perm = order_rng.permutation(ds.num_train)
    edges = ds.train[perm]
    n = len(edges)
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < 2:
        starts.pop()  # merge the short tail into the previous batch
    for b, start in enumerate(starts):
        stop = starts[b + 1] if b + 1 < len(starts) else n
        chunk = edges[start:stop]
        batch_rng = np.random.default_rng([seed, epoch, b])
        yield Batch(
            users=chunk[:, 0].copy(),
            pos_items=chunk[:, 1].copy(),
            neg_items=_sample_negatives(chunk[:, 0], ds, batch_rng),
        )
