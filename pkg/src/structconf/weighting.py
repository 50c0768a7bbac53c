"""Graph scores (BIC plus Bernoulli structural prior) and strategy weights."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .graphs import Dag, admissible_pairs
from .identification import AdjustmentStrategy
from .prior import EdgePrior

logger = logging.getLogger(__name__)

RIDGE = 1e-8
LOG_FLOOR = -500.0
VARIANCE_FLOOR = 1e-12
BIC_VARIANTS = ("auto", "gaussian", "discrete")


@dataclass(frozen=True)
class GraphScore:
    log_bic: float
    log_structural_prior: float

    @property
    def log_weight(self) -> float:
        return self.log_bic + self.log_structural_prior


@dataclass(frozen=True)
class StrategyWeights:
    strategies: tuple[AdjustmentStrategy, ...]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (len(self.strategies),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector over strategies")
        object.__setattr__(self, "weights", w)


def _ols_rss(target: np.ndarray, design: np.ndarray) -> float:
    gram = design.T @ design
    if np.linalg.matrix_rank(design) < design.shape[1]:
        logger.warning("singular parent design; adding ridge %g", RIDGE)
        gram = gram + RIDGE * np.eye(gram.shape[0])
    coef = np.linalg.solve(gram, design.T @ target)
    resid = target - design @ coef
    return float(resid @ resid)


def bic_gaussian(g: Dag, train: np.ndarray) -> float:
    """Sum of per-node Gaussian log-likelihoods minus ``(d / 2) log n``.

    Each node is regressed on its parents with an intercept and scored at the
    MLE variance; ``d`` counts coefficients, intercept and variance per node.
    """
    n = train.shape[0]
    loglik = 0.0
    n_params = 0
    ones = np.ones((n, 1))
    for v, pa in enumerate(g.parents()):
        cols = sorted(pa)
        design = np.hstack([ones, train[:, cols]]) if cols else ones
        sigma2 = max(_ols_rss(train[:, v], design) / n, VARIANCE_FLOOR)
        loglik += -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
        n_params += len(cols) + 2
    return loglik - 0.5 * n_params * math.log(n)


def discretize(train: np.ndarray, max_unique: int = 10, bins: int = 5) -> np.ndarray:
    """Integer level codes per column; columns with many values are quantile-binned."""
    codes = np.empty(train.shape, dtype=int)
    for j in range(train.shape[1]):
        col = train[:, j]
        if np.unique(col).size > max_unique:
            col = pd.qcut(col, q=bins, labels=False, duplicates="drop").astype(float)
        codes[:, j] = np.unique(col, return_inverse=True)[1]
    return codes


def bic_discrete(g: Dag, train: np.ndarray, codes: Optional[np.ndarray] = None) -> float:
    """Multinomial BIC over discretized columns.

    Empty cells contribute nothing to the log-likelihood (``0 log 0 = 0``),
    so no smoothing is needed for a finite score.
    """
    n = train.shape[0]
    if codes is None:
        codes = discretize(train)
    levels = codes.max(axis=0) + 1
    loglik = 0.0
    n_params = 0
    for v, pa in enumerate(g.parents()):
        cols = sorted(pa)
        if cols:
            config = np.ravel_multi_index(codes[:, cols].T, tuple(levels[cols]))
        else:
            config = np.zeros(n, dtype=int)
        table = pd.crosstab(config, codes[:, v]).to_numpy().astype(float)
        row = table.sum(axis=1, keepdims=True)
        nz = table > 0
        loglik += float(np.sum(table[nz] * np.log((table / row)[nz])))
        n_params += int((levels[v] - 1) * np.prod(levels[cols])) if cols else int(levels[v] - 1)
    return loglik - 0.5 * n_params * math.log(n)


def choose_bic_variant(train: np.ndarray, outcome: int) -> str:
    """Discrete scoring when the outcome is binary or most columns are low-cardinality."""
    uniques = [np.unique(train[:, j]).size for j in range(train.shape[1])]
    if uniques[outcome] <= 2 or sum(u <= 5 for u in uniques) > train.shape[1] / 2:
        return "discrete"
    return "gaussian"


def structural_log_prior(g: Dag, prior: EdgePrior, admissible: Optional[Sequence[tuple[int, int]]] = None) -> float:
    """Log Bernoulli prior of the edge set over the graph's admissible pairs."""
    if admissible is None:
        admissible = admissible_pairs(g.order)
    total = 0.0
    for u, v in admissible:
        p = prior.prior_prob(g.nodes[u], g.nodes[v])
        total += math.log(p) if (u, v) in g.edges else math.log1p(-p)
    return total


def score_graph(g: Dag, train: np.ndarray, prior: EdgePrior, variant: str = "gaussian",
                codes: Optional[np.ndarray] = None) -> GraphScore:
    if variant == "gaussian":
        bic = bic_gaussian(g, train)
    elif variant == "discrete":
        bic = bic_discrete(g, train, codes)
    else:
        raise ValueError(f"unknown BIC variant {variant!r}")
    return GraphScore(bic, structural_log_prior(g, prior))


def normalize_weights(log_weights: Sequence[float], graph_strategy: Sequence[int],
                      strategies: Sequence[AdjustmentStrategy]) -> StrategyWeights:
    """Stabilized softmax over graphs, summed within strategies, then normalized.

    ``graph_strategy[k]`` is the strategy index of the k-th scored graph.
    """
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise ValueError("no graph scores to normalize")
    shifted = np.maximum(lw - lw.max(), LOG_FLOOR)
    mass = np.zeros(len(strategies))
    for k, s in enumerate(graph_strategy):
        mass[s] += math.exp(shifted[k])
    w = mass / mass.sum()
    # Renormalize once more so the sum is 1 to within a few ulps.
    w = w / math.fsum(w)
    return StrategyWeights(tuple(strategies), w)


def bic_separation(bics: Sequence[float], valid: Sequence[bool]) -> Optional[float]:
    """min BIC over graphs in the valid class minus max BIC outside it."""
    inside = [b for b, ok in zip(bics, valid) if ok]
    outside = [b for b, ok in zip(bics, valid) if not ok]
    if not inside or not outside:
        return None
    return min(inside) - max(outside)
