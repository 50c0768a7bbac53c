"""Per-strategy nuisance models, AIPW pseudo-outcomes and linear-DR effect bands.

Nuisances use only the strategy's adjustment columns. The effect band
regresses train pseudo-outcomes on every pre-treatment covariate, so the
interval is conditional on the full baseline covariate vector.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.stats import norm

from .dataset import DataSlice
from .identification import AdjustmentStrategy

IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8
IRLS_JITTER = 1e-8
RIDGE_LAMBDA = 1e-6
BAND_JITTER = 1e-8


class EstimationError(RuntimeError):
    pass


def _design(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), x])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_logistic(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Logistic regression by IRLS with a tiny L2 jitter.

    Falls back to the intercept-only MLE (with a warning) when Newton steps do
    not settle within the iteration budget, e.g. under separation.
    """
    design = _design(x)
    beta = np.zeros(design.shape[1])
    jitter = IRLS_JITTER * np.eye(design.shape[1])
    for _ in range(IRLS_MAX_ITER):
        p = _sigmoid(design @ beta)
        w = p * (1.0 - p)
        hess = design.T @ (design * w[:, None]) + jitter
        grad = design.T @ (t - p) - IRLS_JITTER * beta
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            break
        if np.max(np.abs(step)) < IRLS_TOL:
            return beta
    warnings.warn("IRLS did not converge; using intercept-only propensity")
    mean = float(np.clip(t.mean(), 1e-12, 1 - 1e-12))
    beta = np.zeros(design.shape[1])
    beta[0] = np.log(mean / (1.0 - mean))
    return beta


def fit_ridge(x: np.ndarray, y: np.ndarray, lam: float = RIDGE_LAMBDA) -> np.ndarray:
    design = _design(x)
    penalty = lam * np.eye(design.shape[1])
    penalty[0, 0] = 0.0
    return np.linalg.solve(design.T @ design + penalty, design.T @ y)


@dataclass(frozen=True)
class NuisanceFit:
    strategy: AdjustmentStrategy
    propensity_coefs: np.ndarray
    mu0_coefs: np.ndarray
    mu1_coefs: np.ndarray
    clip_eps: float
    crossfit_folds: Optional[np.ndarray] = None
    fold_coefs: tuple = ()

    def _z(self, covariates: np.ndarray) -> np.ndarray:
        return covariates[:, list(self.strategy.variables)]

    def predict(self, covariates: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Clipped propensity and the two arm regressions."""
        return _predict(self._z(covariates), self.propensity_coefs, self.mu0_coefs, self.mu1_coefs, self.clip_eps)


def _predict(z, prop, mu0, mu1, eps):
    design = _design(z)
    e = np.clip(_sigmoid(design @ prop), eps, 1.0 - eps)
    return e, design @ mu0, design @ mu1


def _fit_arms(z: np.ndarray, t: np.ndarray, y: np.ndarray):
    prop = fit_logistic(z, t)
    treated = t == 1
    return prop, fit_ridge(z[~treated], y[~treated]), fit_ridge(z[treated], y[treated])


def crossfit_fold_count(t: np.ndarray, folds: int) -> int:
    n1 = int(np.sum(t == 1))
    n0 = t.size - n1
    return max(min(folds, n0, n1), 1)


def fit_nuisances(train: DataSlice, strategy: AdjustmentStrategy, eps: float = 0.05,
                  crossfit: bool = False, folds: int = 5, seed: int = 0) -> NuisanceFit:
    """Propensity and arm-wise outcome models on the train rows.

    With ``crossfit`` the train rows are also split into arm-stratified folds
    and per-fold models are kept for out-of-fold train pseudo-outcomes.
    Calibration and test rows always use the full-train models.
    """
    train.require("train")
    if not 0.0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 0.5)")
    t, y = train.treatment, train.outcome
    if np.all(t == 1) or np.all(t == 0):
        raise EstimationError("both treatment arms are needed to fit nuisances")
    z = train.covariates[:, list(strategy.variables)]
    prop, mu0, mu1 = _fit_arms(z, t, y)
    fold_ids = None
    fold_coefs: tuple = ()
    if crossfit:
        k = crossfit_fold_count(t, folds)
        fold_ids = np.empty(t.size, dtype=int)
        rng = np.random.default_rng(seed)
        for arm in (0, 1):
            idx = np.flatnonzero(t == arm)
            idx = idx[rng.permutation(idx.size)]
            fold_ids[idx] = np.arange(idx.size) % k
        coefs = []
        for f in range(k):
            rest = fold_ids != f
            if k == 1 or np.unique(t[rest]).size < 2:
                coefs.append((prop, mu0, mu1))
            else:
                coefs.append(_fit_arms(z[rest], t[rest], y[rest]))
        fold_coefs = tuple(coefs)
    return NuisanceFit(strategy, prop, mu0, mu1, eps, fold_ids, fold_coefs)


def aipw_pseudo_outcome(e, mu0, mu1, t, y):
    """Doubly robust pseudo-outcome from already clipped nuisance predictions."""
    return mu1 - mu0 + t * (y - mu1) / e - (1 - t) * (y - mu0) / (1 - e)


def pseudo_outcomes(fit: NuisanceFit, rows: DataSlice) -> np.ndarray:
    e, mu0, mu1 = fit.predict(rows.covariates)
    return aipw_pseudo_outcome(e, mu0, mu1, rows.treatment, rows.outcome)


def train_pseudo_outcomes(fit: NuisanceFit, train: DataSlice) -> np.ndarray:
    """In-sample pseudo-outcomes, or out-of-fold ones when the fit is cross-fitted."""
    train.require("train")
    if fit.crossfit_folds is None:
        return pseudo_outcomes(fit, train)
    z = fit._z(train.covariates)
    out = np.empty(len(train))
    for f, (prop, mu0, mu1) in enumerate(fit.fold_coefs):
        mask = fit.crossfit_folds == f
        e, m0, m1 = _predict(z[mask], prop, mu0, mu1, fit.clip_eps)
        out[mask] = aipw_pseudo_outcome(e, m0, m1, train.treatment[mask], train.outcome[mask])
    return out


@dataclass(frozen=True)
class EffectBoundModel:
    """Linear effect model with a heteroskedasticity-robust band.

    ``columns`` are the covariate indices used as regressors (an intercept is
    prepended).
    """

    dr_coefs: np.ndarray
    sandwich_cov: np.ndarray
    z_crit: float
    columns: tuple[int, ...]

    def point(self, covariates: np.ndarray) -> np.ndarray:
        return _design(covariates[:, list(self.columns)]) @ self.dr_coefs

    def bounds(self, covariates: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        design = _design(covariates[:, list(self.columns)])
        center = design @ self.dr_coefs
        var = np.einsum("ij,jk,ik->i", design, self.sandwich_cov, design)
        half = self.z_crit * np.sqrt(np.maximum(var, 0.0))
        return center - half, center + half, center


def fit_effect_bounds(train: DataSlice, fit: NuisanceFit, alpha: float = 0.10,
                      columns: Optional[tuple[int, ...]] = None) -> EffectBoundModel:
    """OLS of train pseudo-outcomes on covariates with an HC0 sandwich band."""
    train.require("train")
    if columns is None:
        columns = tuple(train.pre_treatment) or tuple(range(train.covariates.shape[1]))
    gamma = train_pseudo_outcomes(fit, train)
    design = _design(train.covariates[:, list(columns)])
    gram = design.T @ design
    if np.linalg.matrix_rank(design) < design.shape[1]:
        warnings.warn("singular effect design; adding ridge jitter")
        gram = gram + BAND_JITTER * np.eye(gram.shape[0])
    bread = np.linalg.inv(gram)
    coef = bread @ design.T @ gamma
    resid = gamma - design @ coef
    meat = design.T @ (design * (resid ** 2)[:, None])
    cov = bread @ meat @ bread
    cov = 0.5 * (cov + cov.T)
    return EffectBoundModel(coef, cov, float(norm.ppf(1.0 - alpha / 2.0)), tuple(columns))


@dataclass(frozen=True)
class StrategyEvaluation:
    pseudo: np.ndarray
    q_low: np.ndarray
    q_high: np.ndarray
    tau_hat: np.ndarray


def evaluate_strategy(fit: NuisanceFit, bounds: EffectBoundModel, rows: DataSlice) -> StrategyEvaluation:
    """Pseudo-outcomes and band on calibration or test rows."""
    rows.require("cal", "test")
    lo, hi, center = bounds.bounds(rows.covariates)
    return StrategyEvaluation(pseudo_outcomes(fit, rows), lo, hi, center)
