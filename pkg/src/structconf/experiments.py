"""Experiment drivers: collider stress, prior washout, alpha sweep, K sweep, ablations."""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from typing import Optional, Sequence

from . import conformal as cf
from .dataset import Dataset, gen_synthetic_scm, inject_collider, split_dataset
from .identification import AdjustmentStrategy
from .pipeline import (VARIANTS, RunConfig, RunReport, evaluate_metrics, evaluate_rows, fit_ensemble,
                       run_pipeline, summarize, summarize_reports)
from .prior import EdgePrior, role_prior, uniform_prior

logger = logging.getLogger(__name__)

PRIOR_KINDS = ("true", "uniform", "inverted")
DEFAULT_ALPHAS = (0.01, 0.05, 0.10, 0.20, 0.30, 0.50)


def synthetic_prior(data: Dataset, kind: str = "true") -> EdgePrior:
    """Role-based prior for synthetic data: informed, flat, or flipped."""
    if kind == "uniform":
        return uniform_prior(data.names)
    prior = role_prior(data.names, data.true_edges or ())
    if kind == "true":
        return prior
    if kind == "inverted":
        return prior.inverted()
    raise ValueError(f"unknown prior kind {kind!r}")


def forced_collider_strategy(data: Dataset, name: str = "X_col") -> AdjustmentStrategy:
    """Every pre-treatment covariate plus the collider, as a single fixed set."""
    cols = sorted(set(data.pre_treatment_indices()) | {data.covariate_names.index(name)})
    return AdjustmentStrategy(tuple(cols))


def _mean(reports: Sequence[RunReport], name: str) -> Optional[float]:
    s = summarize([getattr(r, name) for r in reports])
    return None if s is None else s["mean"]


def run_collider_stress(config: RunConfig, n: int = 1000, seeds: Sequence[int] = (),
                        name: str = "X_col") -> dict:
    """Method vs a baseline that forces the collider into its adjustment set."""
    seeds = tuple(seeds) or config.seeds
    method, naive = [], []
    excluded = []
    for s in seeds:
        data = inject_collider(gen_synthetic_scm(n, s), s, name)
        cfg = replace(config, seed=int(s))
        prior = synthetic_prior(data)
        r = run_pipeline(cfg, data, prior)
        method.append(r)
        excluded.append(all(name not in st["variables"] for st in r.strategies))
        naive.append(run_pipeline(cfg, data, prior, forced_strategy=forced_collider_strategy(data, name)))
    return {
        "n": n,
        "seeds": [int(s) for s in seeds],
        "collider_excluded_all_runs": bool(all(excluded)),
        "method": summarize_reports(method),
        "naive": summarize_reports(naive),
        "method_per_seed": [r.to_dict() for r in method],
        "naive_per_seed": [r.to_dict() for r in naive],
    }


def run_washout(config: RunConfig, n_list: Sequence[int] = (100, 500, 2000), seeds: Sequence[int] = (),
                priors: Sequence[str] = PRIOR_KINDS) -> dict:
    """Valid-strategy mass, structural spread, score separation and width as n grows."""
    seeds = tuple(seeds) or config.seeds
    table: dict = {}
    for kind in priors:
        rows = []
        for n in n_list:
            reports = []
            for s in seeds:
                data = gen_synthetic_scm(int(n), int(s))
                reports.append(run_pipeline(replace(config, seed=int(s)), data, synthetic_prior(data, kind)))
            summary = summarize_reports(reports)
            rows.append({"n": int(n), "summary": summary,
                         "valid_strategy_mass": _mean(reports, "valid_strategy_mass"),
                         "sigma_struct_mean": _mean(reports, "sigma_struct_mean"),
                         "delta_n": _mean(reports, "delta_n"),
                         "mean_width": _mean(reports, "mean_width"),
                         "coverage_pseudo": _mean(reports, "coverage_pseudo")})
            logger.info("washout prior=%s n=%d mass=%s", kind, n, rows[-1]["valid_strategy_mass"])
        table[kind] = rows
    return {"n_list": [int(n) for n in n_list], "seeds": [int(s) for s in seeds], "priors": table}


def run_calibration_sweep(config: RunConfig, data: Dataset, prior: EdgePrior,
                          alphas: Sequence[float] = DEFAULT_ALPHAS) -> dict:
    """Recalibrate one fitted ensemble at several alphas on a single split.

    Bands, weights and scores are shared, so only the quantile moves and the
    intervals are nested.
    """
    alphas = [float(a) for a in alphas]
    if alphas != sorted(alphas):
        raise ValueError("alphas must be sorted ascending")
    split = split_dataset(data, config.splits, config.seed)
    fitted = fit_ensemble(config, data, prior, data.take(split.train, "train"))
    _, cal = evaluate_rows(fitted, data.take(split.cal, "cal"))
    test_rows = data.take(split.test, "test")
    _, test = evaluate_rows(fitted, test_rows)
    rows = []
    for a in alphas:
        q = cf.conformal_quantile(cal.scores, a, config.quantile_mode)
        lo, hi = cf.interval_from_bounds(test.bar_q_low, test.bar_q_high, q)
        m = evaluate_metrics(lo, hi, test.bar_gamma, test_rows.true_cate, test.bar_tau)
        rows.append({"alpha": a, "quantile_hat": q, **m})
    return {"seed": config.seed, "rows": rows}


def run_k_sweep(config: RunConfig, data_factory, prior_factory, k_list: Sequence[int] = (1, 3, 5, 10),
                seeds: Sequence[int] = ()) -> dict:
    """Coverage, width and wall time per ensemble size."""
    seeds = tuple(seeds) or config.seeds
    rows = []
    for k in k_list:
        if k < 1:
            raise ValueError("every K must be at least 1")
        reports, times = [], []
        for s in seeds:
            data = data_factory(int(s))
            start = time.perf_counter()
            reports.append(run_pipeline(replace(config, K=int(k), seed=int(s)), data, prior_factory(data)))
            times.append(time.perf_counter() - start)
        rows.append({"K": int(k), "summary": summarize_reports(reports),
                     "runtime_seconds": summarize(times)})
    return {"k_list": [int(k) for k in k_list], "seeds": [int(s) for s in seeds], "rows": rows}


def run_ablations(config: RunConfig, data_factory, prior_factory, variants: Sequence[str] = VARIANTS,
                  seeds: Sequence[int] = ()) -> dict:
    seeds = tuple(seeds) or config.seeds
    out = {}
    for v in variants:
        reports = []
        for s in seeds:
            data = data_factory(int(s))
            reports.append(run_pipeline(replace(config, variant=v, seed=int(s)), data, prior_factory(data)))
        out[v] = summarize_reports(reports)
    return {"seeds": [int(s) for s in seeds], "variants": out}


def scm_factory(n: int, collider: bool = False):
    def make(seed: int) -> Dataset:
        data = gen_synthetic_scm(n, seed)
        return inject_collider(data, seed) if collider else data
    return make
