"""Trainable embedding tables, initialization, similarity, scoring, checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"LCCF"

SIMILARITY_KINDS = ("dot", "cosine")


@dataclass
class EmbeddingState:
    """User and item embedding tables; the only trainable parameters."""

    user_emb: np.ndarray  # M x d
    item_emb: np.ndarray  # N x d

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.user_emb.copy(), self.item_emb.copy())

    def all_finite(self) -> bool:
        return bool(np.isfinite(self.user_emb).all() and np.isfinite(self.item_emb).all())


def init_xavier(num_users: int, num_items: int, dim: int, seed: int = 0) -> EmbeddingState:
    """Xavier-uniform tables: entries in +-sqrt(6 / (fan_in + fan_out)), fan = dim."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    bound = np.sqrt(6.0 / (2 * dim))
    rng = np.random.default_rng(seed)
    return EmbeddingState(
        user_emb=rng.uniform(-bound, bound, size=(num_users, dim)),
        item_emb=rng.uniform(-bound, bound, size=(num_items, dim)),
    )


def similarity(a: np.ndarray, b: np.ndarray, kind: str = "dot") -> float:
    """Dot or cosine similarity of two vectors."""
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if kind == "dot":
        return float(a @ b)
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise ValueError("cosine similarity undefined for zero vectors")
        return float(a @ b / (na * nb))
    raise ValueError(f"unknown similarity kind {kind!r}")


def score_all_items(u: int, state: EmbeddingState) -> np.ndarray:
    """Dot-product scores of user u against every item (ranking scores)."""
    return state.item_emb @ state.user_emb[u]


def save_checkpoint(
    state: EmbeddingState, path: str, seed: int | None = None, similarity_kind: str = "cosine"
) -> None:
    """Binary checkpoint: magic, JSON header, then both tables row-major float64."""
    header = {
        "num_users": state.num_users,
        "num_items": state.num_items,
        "dim": state.dim,
        "seed": seed,
        "similarity": similarity_kind,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(state.user_emb, dtype=np.float64).tobytes())
        fh.write(np.ascontiguousarray(state.item_emb, dtype=np.float64).tobytes())


def load_checkpoint(path: str) -> tuple[EmbeddingState, dict]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        m, n, d = header["num_users"], header["num_items"], header["dim"]
        user = np.frombuffer(fh.read(m * d * 8), dtype=np.float64).reshape(m, d).copy()
        item = np.frombuffer(fh.read(n * d * 8), dtype=np.float64).reshape(n, d).copy()
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes, header does not match payload")
    return EmbeddingState(user, item), header
