"""Backdoor adjustment sets for the treatment -> outcome effect of candidate DAGs."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Optional, Sequence

from .dataset import TemporalStatus, VariableMeta
from .graphs import Dag

logger = logging.getLogger(__name__)

SEARCH_CAP = 20


class IdentificationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdjustmentStrategy:
    """A unique adjustment set (sorted covariate indices) shared by one or more graphs."""

    variables: tuple[int, ...]
    source_graph_count: int = 1

    @property
    def key(self) -> str:
        return ",".join(str(i) for i in self.variables)

    def names(self, covariate_names: Sequence[str]) -> list[str]:
        return [covariate_names[i] for i in self.variables]


def descendants(g: Dag, node: int) -> set[int]:
    children = g.children()
    seen: set[int] = set()
    stack = [node]
    while stack:
        for c in children[stack.pop()]:
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return seen


def ancestors(parents: Sequence[set[int]], nodes: Iterable[int]) -> set[int]:
    """``nodes`` together with all their ancestors."""
    out = set(nodes)
    stack = list(out)
    while stack:
        for p in parents[stack.pop()]:
            if p not in out:
                out.add(p)
                stack.append(p)
    return out


def d_separated(parents: Sequence[set[int]], x: int, y: int, z: Iterable[int]) -> bool:
    """Moralized ancestral graph test for ``x`` and ``y`` given ``z``."""
    z = set(z)
    keep = ancestors(parents, {x, y} | z)
    adj: dict[int, set[int]] = {v: set() for v in keep}
    for v in keep:
        pa = [p for p in parents[v] if p in keep]
        for p in pa:
            adj[v].add(p)
            adj[p].add(v)
        for i, a in enumerate(pa):
            for b in pa[i + 1:]:
                adj[a].add(b)
                adj[b].add(a)
    if x in z or y in z:
        return True
    seen = {x}
    stack = [x]
    while stack:
        for w in adj[stack.pop()]:
            if w == y:
                return False
            if w not in seen and w not in z:
                seen.add(w)
                stack.append(w)
    return True


def _backdoor_parents(g: Dag) -> list[set[int]]:
    """Parent sets after deleting every edge out of the treatment."""
    pa = g.parents()
    for v in range(len(pa)):
        pa[v].discard(g.treatment)
    return pa


def is_valid_backdoor(g: Dag, z: Iterable[int], _desc: Optional[set[int]] = None,
                      _pa: Optional[list[set[int]]] = None) -> bool:
    """Backdoor criterion: no treatment descendants in ``z`` and every path
    entering the treatment through an arrowhead is blocked by ``z``."""
    z = set(z)
    desc = descendants(g, g.treatment) if _desc is None else _desc
    if z & desc or g.treatment in z or g.outcome in z:
        return False
    pa = _backdoor_parents(g) if _pa is None else _pa
    return d_separated(pa, g.treatment, g.outcome, z)


def minimum_backdoor_set(g: Dag, allowed: Optional[Iterable[int]] = None,
                         cap: int = SEARCH_CAP) -> Optional[tuple[int, ...]]:
    """Smallest valid backdoor set, ties broken by ascending column indices.

    The search runs over ``allowed`` covariates (all covariates by default)
    that are not treatment descendants. Minimal separators lie among the
    ancestors of treatment and outcome, so only those are enumerated.
    """
    desc = descendants(g, g.treatment)
    covs = set(range(len(g.nodes))) - {g.treatment, g.outcome}
    if allowed is not None:
        covs &= set(allowed)
    parents = g.parents()
    anc = ancestors(parents, {g.treatment, g.outcome})
    pool = sorted((covs - desc) & anc)
    if len(pool) > cap:
        raise IdentificationError(
            f"adjustment search intractable: {len(pool)} candidate covariates exceed cap {cap}"
        )
    pa = _backdoor_parents(g)
    for size in range(len(pool) + 1):
        for combo in combinations(pool, size):
            if d_separated(pa, g.treatment, g.outcome, combo):
                return combo
    return None


@dataclass(frozen=True)
class Identification:
    """Collapsed strategies plus, per input graph, the index of its strategy
    (``None`` for excluded graphs)."""

    strategies: tuple[AdjustmentStrategy, ...]
    graph_strategy: tuple[Optional[int], ...]
    prefilter_post_fraction: float
    n_excluded: int

    @property
    def surviving(self) -> list[int]:
        return [k for k, s in enumerate(self.graph_strategy) if s is not None]


def strategies_from_ensemble(graphs: Sequence[Dag], meta: Sequence[VariableMeta],
                             fallback_empty: bool = False, cap: int = SEARCH_CAP) -> Identification:
    """Pick one adjustment set per graph and collapse duplicates.

    The final set is the minimum valid set over pre-treatment covariates. A
    graph without one is dropped, unless ``fallback_empty`` is set, in which
    case it adjusts for nothing. As a diagnostic, the same search is also
    run without the temporal filter, and the share of graphs whose
    unfiltered set would use a post-treatment variable is reported.
    """
    if not graphs:
        raise IdentificationError("empty ensemble after identification")
    n_cov = len(meta) - 2
    pre = [j for j in range(n_cov) if meta[j].temporal_status is TemporalStatus.PRE_TREATMENT]
    post = {j for j in range(n_cov) if meta[j].temporal_status is TemporalStatus.POST_TREATMENT}
    keys: dict[tuple[int, ...], int] = {}
    counts: list[int] = []
    order: list[tuple[int, ...]] = []
    assignment: list[Optional[int]] = []
    post_hits = 0
    for g in graphs:
        if post:
            unfiltered = minimum_backdoor_set(g, cap=cap)
            if unfiltered is not None and post & set(unfiltered):
                post_hits += 1
        z = minimum_backdoor_set(g, allowed=pre, cap=cap)
        if z is None:
            if fallback_empty:
                warnings.warn("no admissible adjustment set; falling back to the empty set")
                z = ()
            else:
                logger.info("excluding graph without an admissible adjustment set")
                assignment.append(None)
                continue
        if z not in keys:
            keys[z] = len(order)
            order.append(z)
            counts.append(0)
        counts[keys[z]] += 1
        assignment.append(keys[z])
    if not order:
        raise IdentificationError("empty ensemble after identification")
    strategies = tuple(AdjustmentStrategy(z, c) for z, c in zip(order, counts))
    return Identification(strategies, tuple(assignment), post_hits / len(graphs),
                          sum(a is None for a in assignment))
