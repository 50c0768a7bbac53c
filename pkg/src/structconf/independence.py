"""Fisher-z partial-correlation tests and single-pass greedy edge pruning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .graphs import Dag

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-20


class DegenerateTestError(ArithmeticError):
    """The conditioning design is singular or a residual vector is constant."""


@dataclass(frozen=True)
class CITestResult:
    statistic: float
    p_value: float
    r: float
    df_n: int
    degenerate: bool = False


def _residualize(v: np.ndarray, design: np.ndarray) -> np.ndarray:
    coef, *_ = np.linalg.lstsq(design, v, rcond=None)
    return v - design @ coef


def partial_correlation(x: int, y: int, conditioning: Sequence[int], data: np.ndarray) -> float:
    """Correlation of the OLS residuals of columns ``x`` and ``y`` on ``conditioning``.

    An intercept is always included; with no conditioning columns this is the
    Pearson correlation.
    """
    if x == y:
        return 1.0
    cond = list(conditioning)
    n = data.shape[0]
    if n <= len(cond) + 3:
        raise DegenerateTestError(f"n={n} too small for {len(cond)} conditioning columns")
    xs, ys = data[:, x], data[:, y]
    if cond:
        design = np.column_stack([np.ones(n), data[:, cond]])
        if np.linalg.matrix_rank(design) < design.shape[1]:
            raise DegenerateTestError("singular conditioning design")
        rx, ry = _residualize(xs, design), _residualize(ys, design)
    else:
        rx, ry = xs - xs.mean(), ys - ys.mean()
    for r, v in ((rx, xs), (ry, ys)):
        # Residuals at roundoff level mean the column is explained exactly.
        scale = float(np.sum((v - v.mean()) ** 2))
        if not float(r @ r) > RESIDUAL_TOL * scale:
            raise DegenerateTestError("constant residuals")
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def fisher_z_pvalue(r: float, n: int, s: int) -> CITestResult:
    df = n - s - 3
    if df < 1:
        raise ValueError(f"need n - s - 3 >= 1, got n={n}, s={s}")
    if abs(r) >= 1.0:
        return CITestResult(math.copysign(math.inf, r), 0.0, float(np.sign(r)), n, degenerate=True)
    z = math.atanh(r) * math.sqrt(df)
    return CITestResult(z, float(2.0 * norm.sf(abs(z))), float(r), n)


def ci_test(x: int, y: int, conditioning: Sequence[int], data: np.ndarray) -> CITestResult:
    r = partial_correlation(x, y, conditioning, data)
    return fisher_z_pvalue(r, data.shape[0], len(conditioning))


def prune_graph(g: Dag, train: np.ndarray, alpha_ci: float = 0.05) -> Dag:
    """Drop edges whose endpoints test conditionally independent.

    Edges are visited once in (position of source, position of target)
    order. Each test conditions on the target's other parents in the graph as
    pruned so far. The treatment -> outcome edge is never tested, and an
    edge whose test is degenerate is kept.
    """
    if not 0.0 < alpha_ci < 1.0:
        raise ValueError("alpha_ci must lie in (0, 1)")
    if train.shape[1] != len(g.nodes):
        raise ValueError("train matrix columns must match graph nodes")
    edges = set(g.edges)
    parents = g.parents()
    protected = (g.treatment, g.outcome)
    for u, v in g.canonical_edges():
        if (u, v) == protected:
            continue
        cond = sorted(parents[v] - {u})
        try:
            res = ci_test(u, v, cond, train)
        except DegenerateTestError as exc:
            logger.warning("keeping %s->%s: %s", g.nodes[u], g.nodes[v], exc)
            continue
        if res.p_value > alpha_ci:
            edges.discard((u, v))
            parents[v].discard(u)
    return g.with_edges(edges)
