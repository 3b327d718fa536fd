"""Shared fixtures: a tiny hand-checkable dataset and a small synthetic one."""

import numpy as np
import pytest

from lightccf.data import assemble_dataset, split_per_user, synthetic_interactions


@pytest.fixture
def tiny_ds():
    """Two users, three items: u0-{i0,i1}, u1-{i0} in train; one test edge each.

    Degrees give the hand-computed adjacency weights
    w(u0,i0)=1/sqrt(2*2)=0.5 and w(u0,i1)=w(u1,i0)=1/sqrt(2).
    """
    train = np.array([[0, 0], [0, 1], [1, 0]], dtype=np.int64)
    test = np.array([[0, 2], [1, 1]], dtype=np.int64)
    return assemble_dataset(num_users=2, num_items=3, train=train, test=test)


@pytest.fixture(scope="session")
def small_ds():
    """A few thousand synthetic interactions with a per-user holdout split."""
    edges = synthetic_interactions(60, 80, min_degree=4, max_degree=12, seed=3)
    return split_per_user(edges, train_ratio=0.8, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
