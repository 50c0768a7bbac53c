"""Candidate DAG ensembles drawn from an edge prior under temporal constraints."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import TemporalStatus, VariableMeta
from .prior import EdgePrior

ORDER_RULES = ("stratified", "appendix")

# Stratum rank used by the stratified order rule: covariates before treatment,
# outcome and post-treatment variables after it.
_STRATUM = {
    TemporalStatus.PRE_TREATMENT: 0,
    TemporalStatus.TREATMENT: 1,
    TemporalStatus.OUTCOME: 2,
    TemporalStatus.POST_TREATMENT: 2,
}


@dataclass(frozen=True)
class Dag:
    """Directed acyclic graph over integer node ids.

    ``order`` lists node ids in the generating topological order and every
    edge ``(u, v)`` satisfies ``position[u] < position[v]``.
    """

    nodes: tuple[str, ...]
    order: tuple[int, ...]
    edges: frozenset
    treatment: int
    outcome: int

    @property
    def position(self) -> dict[int, int]:
        return {v: i for i, v in enumerate(self.order)}

    def parents(self) -> list[set[int]]:
        pa: list[set[int]] = [set() for _ in self.nodes]
        for u, v in self.edges:
            pa[v].add(u)
        return pa

    def children(self) -> list[set[int]]:
        ch: list[set[int]] = [set() for _ in self.nodes]
        for u, v in self.edges:
            ch[u].add(v)
        return ch

    def key(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(self.edges))

    def with_edges(self, edges) -> "Dag":
        return Dag(self.nodes, self.order, frozenset(edges), self.treatment, self.outcome)

    def canonical_edges(self) -> list[tuple[int, int]]:
        pos = self.position
        return sorted(self.edges, key=lambda e: (pos[e[0]], pos[e[1]]))

    def to_json(self) -> dict:
        return {
            "order": [self.nodes[i] for i in self.order],
            "edges": [[self.nodes[u], self.nodes[v]] for u, v in self.canonical_edges()],
        }

    @classmethod
    def from_json(cls, obj: dict, nodes: Sequence[str], treatment: str, outcome: str) -> "Dag":
        idx = {name: i for i, name in enumerate(nodes)}
        order = tuple(idx[s] for s in obj["order"])
        edges = frozenset((idx[u], idx[v]) for u, v in obj["edges"])
        return cls(tuple(nodes), order, edges, idx[treatment], idx[outcome])


def _roles(meta: Sequence[VariableMeta]) -> tuple[int, int]:
    statuses = [m.temporal_status for m in meta]
    return statuses.index(TemporalStatus.TREATMENT), statuses.index(TemporalStatus.OUTCOME)


def sample_topological_order(meta: Sequence[VariableMeta], rng: np.random.Generator,
                             rule: str = "stratified") -> tuple[int, ...]:
    """Uniform permutation corrected to respect temporal metadata.

    ``stratified`` stably sorts the permutation so pre-treatment variables come
    first, then the treatment, then outcome and post-treatment variables.
    ``appendix`` only swaps treatment and outcome when they are out of order.
    """
    if rule not in ORDER_RULES:
        raise ValueError(f"unknown order rule {rule!r}")
    perm = [int(i) for i in rng.permutation(len(meta))]
    if rule == "stratified":
        perm.sort(key=lambda i: _STRATUM[meta[i].temporal_status])
    else:
        t, y = _roles(meta)
        it, iy = perm.index(t), perm.index(y)
        if it > iy:
            perm[it], perm[iy] = y, t
    return tuple(perm)


def admissible_pairs(order: Sequence[int], meta: Optional[Sequence[VariableMeta]] = None) -> list[tuple[int, int]]:
    """All forward pairs of ``order``, listed by (position of u, position of v).

    Temporal constraints are already encoded in the order, so ``meta`` is only
    accepted for interface symmetry.
    """
    return [(order[i], order[j]) for i in range(len(order)) for j in range(i + 1, len(order))]


def sample_dag(prior: EdgePrior, order: Sequence[int], meta: Sequence[VariableMeta],
               rng: np.random.Generator, max_edges: Optional[int] = None) -> Dag:
    """Independent Bernoulli draw for every admissible pair, then force T -> Y."""
    names = tuple(m.name for m in meta)
    t, y = _roles(meta)
    pairs = admissible_pairs(order, meta)
    probs = np.array([prior.prob(names[u], names[v]) for u, v in pairs])
    draws = rng.random(len(pairs)) < probs
    chosen = [pair for pair, keep in zip(pairs, draws) if keep]
    if max_edges is not None and len(chosen) > max_edges:
        chosen = chosen[:max_edges]
    edges = set(chosen)
    edges.add((t, y))
    return Dag(names, tuple(order), frozenset(edges), t, y)


def sample_ensemble(prior: EdgePrior, meta: Sequence[VariableMeta], K: int, seed: int,
                    max_attempts: Optional[int] = None, rule: str = "stratified",
                    max_edges: Optional[int] = None) -> list[Dag]:
    """First ``K`` distinct edge sets, resampling a fresh order on every attempt."""
    if K < 1:
        raise ValueError("K must be at least 1")
    attempts = 100 * K if max_attempts is None else max_attempts
    if attempts < K:
        raise ValueError("max_attempts must be at least K")
    rng = np.random.default_rng(seed)
    seen: set = set()
    graphs: list[Dag] = []
    for _ in range(attempts):
        order = sample_topological_order(meta, rng, rule)
        g = sample_dag(prior, order, meta, rng, max_edges)
        key = g.key()
        if key in seen:
            continue
        seen.add(key)
        graphs.append(g)
        if len(graphs) == K:
            break
    assert graphs, "forced treatment edge guarantees at least one graph"
    if len(graphs) < K:
        warnings.warn(f"only {len(graphs)} unique DAGs after {attempts} attempts (K={K})")
    return graphs


def dump_ensemble(graphs: Sequence[Dag], path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump([g.to_json() for g in graphs], fh, indent=2)
