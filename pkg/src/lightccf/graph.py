"""Bipartite adjacency, symmetric degree normalization, and linear propagation.

Node ordering is users first, then items, over M + N nodes. The normalized
adjacency carries weight 1/sqrt(deg(u) * deg(i)) on every train edge and no
self-loops, so repeated multiplication mixes neighbor information exactly as a
light graph-convolution encoder does.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .data import InteractionDataset

logger = logging.getLogger(__name__)


@dataclass
class NormalizedAdjacency:
    """Sparse symmetric degree-normalized adjacency over M + N nodes."""

    num_users: int
    num_items: int
    matrix: sp.csr_matrix  # (M+N) x (M+N)

    @property
    def size(self) -> int:
        return self.num_users + self.num_items


@dataclass
class PropagationConfig:
    """Number of propagation layers and their mixing weights.

    ``layer_weights`` has length num_layers + 1 (one weight per power of the
    adjacency, including the identity term); defaults to uniform 1/(L+1).
    """

    num_layers: int = 0
    layer_weights: list[float] | None = field(default=None)

    def weights(self) -> np.ndarray:
        if self.layer_weights is None:
            return np.full(self.num_layers + 1, 1.0 / (self.num_layers + 1))
        w = np.asarray(self.layer_weights, dtype=np.float64)
        if len(w) != self.num_layers + 1:
            raise ValueError("layer_weights must have length num_layers + 1")
        return w


def build_normalized_adjacency(ds: InteractionDataset) -> NormalizedAdjacency:
    """Build the symmetric degree-normalized bipartite adjacency from the train split.

    Zero-degree nodes carry no entries (logged, never divided by).
    """
    m, n = ds.num_users, ds.num_items
    u_deg = np.array([len(nb) for nb in ds.user_neighbors], dtype=np.float64)
    i_deg = np.array([len(nb) for nb in ds.item_neighbors], dtype=np.float64)
    isolated = int((u_deg == 0).sum() + (i_deg == 0).sum())
    if isolated:
        logger.warning("%d isolated nodes excluded from adjacency", isolated)
    users = ds.train[:, 0]
    items = ds.train[:, 1]
    w = 1.0 / np.sqrt(u_deg[users] * i_deg[items])
    rows = np.concatenate([users, items + m])
    cols = np.concatenate([items + m, users])
    vals = np.concatenate([w, w])
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(m + n, m + n))
    return NormalizedAdjacency(num_users=m, num_items=n, matrix=mat)


def propagate(
    user_emb: np.ndarray,
    item_emb: np.ndarray,
    adj: NormalizedAdjacency,
    cfg: PropagationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted sum of adjacency powers applied to the stacked embeddings.

    Returns (user_out, item_out) = split of sum_j w_j * A^j @ [U; I], computed
    iteratively with sparse-dense products. L=0 returns w_0 * input.
    """
    if user_emb.shape[0] != adj.num_users or item_emb.shape[0] != adj.num_items:
        raise ValueError("embedding shape does not match adjacency size")
    w = cfg.weights()
    x = np.vstack([user_emb, item_emb])
    out = w[0] * x
    cur = x
    for j in range(1, cfg.num_layers + 1):
        cur = adj.matrix @ cur
        out = out + w[j] * cur
    return out[: adj.num_users], out[adj.num_users:]


def layer0_user_aggregation(u: int, item_emb: np.ndarray, ds: InteractionDataset) -> np.ndarray:
    """Single-user first-order aggregation: sum_i e_i / sqrt(|N_u| |N_i|).

    Explicit comparison target for the propagation layer-1 user rows.
    """
    nb = ds.user_neighbors[u]
    if len(nb) == 0:
        raise ValueError(f"user {u} has no train neighbors")
    du = len(nb)
    di = np.array([len(ds.item_neighbors[i]) for i in nb], dtype=np.float64)
    return (item_emb[nb] / np.sqrt(du * di)[:, None]).sum(axis=0)


def dump_adjacency(adj: NormalizedAdjacency, path: str) -> None:
    """Write the adjacency as "row col weight" text triplets (fixture comparison)."""
    coo = adj.matrix.tocoo()
    with open(path, "w") as fh:
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")
