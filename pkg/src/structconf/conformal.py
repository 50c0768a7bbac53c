"""Aggregate-then-calibrate split conformal intervals over adjustment strategies."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .estimation import EffectBoundModel, StrategyEvaluation

QUANTILE_MODES = ("sentinel", "cap")


def weighted_sum(weights: Sequence[float], rows: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_k w_k * rows[k]`` accumulated strategy by strategy.

    A fixed left-to-right order keeps the aggregated and per-strategy scores
    comparable bit for bit, which the Jensen check relies on.
    """
    acc = weights[0] * np.asarray(rows[0], dtype=float)
    for w, r in zip(weights[1:], rows[1:]):
        acc = acc + w * np.asarray(r, dtype=float)
    return acc


def composite_score(bar_gamma, q_low, q_high):
    """max(q_low - gamma, gamma - q_high); negative inside the band."""
    return np.maximum(np.subtract(q_low, bar_gamma), np.subtract(bar_gamma, q_high))


graph_score = composite_score


@dataclass(frozen=True)
class AggregatedEvaluation:
    bar_gamma: np.ndarray
    bar_q_low: np.ndarray
    bar_q_high: np.ndarray
    bar_tau: np.ndarray
    scores: np.ndarray
    jensen_scores: np.ndarray
    sigma_struct: np.ndarray


def aggregate(weights: Sequence[float], evals: Sequence[StrategyEvaluation]) -> AggregatedEvaluation:
    """Weighted pseudo-outcome, band and composite scores for a block of rows.

    The composite score is the larger of the weighted lower and upper
    exceedances. ``jensen_scores`` holds the weighted average of the
    per-strategy scores, which can never be smaller.
    """
    w = [float(x) for x in weights]
    lower = weighted_sum(w, [e.q_low - e.pseudo for e in evals])
    upper = weighted_sum(w, [e.pseudo - e.q_high for e in evals])
    scores = np.maximum(lower, upper)
    jensen = weighted_sum(w, [np.maximum(e.q_low - e.pseudo, e.pseudo - e.q_high) for e in evals])
    tau = np.vstack([e.tau_hat for e in evals])
    return AggregatedEvaluation(
        bar_gamma=weighted_sum(w, [e.pseudo for e in evals]),
        bar_q_low=weighted_sum(w, [e.q_low for e in evals]),
        bar_q_high=weighted_sum(w, [e.q_high for e in evals]),
        bar_tau=weighted_sum(w, list(tau)),
        scores=scores,
        jensen_scores=jensen,
        sigma_struct=structural_uncertainty(w, tau),
    )


def conformal_quantile(scores: Sequence[float], alpha: float, mode: str = "sentinel") -> float:
    """The ceil((1 - alpha)(n + 1))-th smallest score.

    When that rank exceeds ``n``, ``sentinel`` returns ``+inf`` (the whole
    line) and ``cap`` returns the largest score; both warn.
    """
    s = np.sort(np.asarray(scores, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("no calibration scores")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if mode not in QUANTILE_MODES:
        raise ValueError(f"unknown quantile mode {mode!r}")
    m = math.ceil((1.0 - alpha) * (n + 1) - 1e-12)
    if m > n:
        warnings.warn(f"calibration set of {n} too small for alpha={alpha}")
        return math.inf if mode == "sentinel" else float(s[-1])
    return float(s[max(m, 1) - 1])


def structural_uncertainty(weights: Sequence[float], tau_hats: np.ndarray) -> np.ndarray:
    """Weighted standard deviation of per-strategy effect predictions.

    ``tau_hats`` has one row per strategy; a 1-D input is a single point.
    """
    w = np.asarray(weights, dtype=float)
    tau = np.asarray(tau_hats, dtype=float)
    if tau.ndim == 1:
        tau = tau[:, None]
    if tau.shape[0] != w.size:
        raise ValueError("one prediction row per weight expected")
    center = w @ tau
    return np.sqrt(np.maximum(w @ (tau - center) ** 2, 0.0))


@dataclass(frozen=True)
class ConformalModel:
    quantile_hat: float
    alpha: float
    n_cal: int
    weights: np.ndarray
    bound_models: tuple[EffectBoundModel, ...]

    def bounds(self, covariates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        lows, highs = [], []
        for m in self.bound_models:
            lo, hi, _ = m.bounds(covariates)
            lows.append(lo)
            highs.append(hi)
        w = [float(x) for x in self.weights]
        return weighted_sum(w, lows), weighted_sum(w, highs)


def calibrate(weights: Sequence[float], bound_models: Sequence[EffectBoundModel],
              cal_scores: np.ndarray, alpha: float, mode: str = "sentinel") -> ConformalModel:
    q = conformal_quantile(cal_scores, alpha, mode)
    return ConformalModel(q, alpha, int(np.size(cal_scores)), np.asarray(weights, dtype=float),
                          tuple(bound_models))


def interval_from_bounds(q_low, q_high, quantile_hat: float):
    return np.subtract(q_low, quantile_hat), np.add(q_high, quantile_hat)


def predict_interval(model: ConformalModel, covariates: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """[weighted lower band - Q, weighted upper band + Q] at each row."""
    x = np.atleast_2d(np.asarray(covariates, dtype=float))
    lo, hi = model.bounds(x)
    return interval_from_bounds(lo, hi, model.quantile_hat)
