from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from structconf.dataset import TemporalStatus, VariableMeta  # noqa: E402
from structconf.graphs import Dag  # noqa: E402
from oracles import random_dag_edges  # noqa: E402


def make_meta(covariates, post=()):
    meta = [VariableMeta(c, TemporalStatus.POST_TREATMENT if c in post else TemporalStatus.PRE_TREATMENT)
            for c in covariates]
    return meta + [VariableMeta("T", TemporalStatus.TREATMENT), VariableMeta("Y", TemporalStatus.OUTCOME)]


def make_dag(covariates, edges, order=None):
    """Dag over ``covariates + [T, Y]`` from name pairs."""
    nodes = tuple(covariates) + ("T", "Y")
    idx = {s: i for i, s in enumerate(nodes)}
    order = tuple(range(len(nodes))) if order is None else tuple(idx[s] for s in order)
    return Dag(nodes, order, frozenset((idx[u], idx[v]) for u, v in edges), idx["T"], idx["Y"])


def random_backdoor_dag(rng, max_cov=6):
    """Random DAG with covariates at arbitrary positions; T before Y."""
    d = int(rng.integers(1, max_cov + 1))
    n = d + 2
    perm = list(rng.permutation(n))
    t, y = d, d + 1
    if perm.index(t) > perm.index(y):
        i, j = perm.index(t), perm.index(y)
        perm[i], perm[j] = y, t
    edges = {(perm[a], perm[b]) for a, b in random_dag_edges(rng, n, float(rng.uniform(0.2, 0.7)))}
    edges.add((t, y))
    return Dag(tuple(f"X{i}" for i in range(d)) + ("T", "Y"), tuple(int(v) for v in perm), frozenset(edges), t, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
