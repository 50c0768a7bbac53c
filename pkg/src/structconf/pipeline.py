"""End-to-end run over a weighted DAG ensemble and its JSON report."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Optional, Sequence

import numpy as np

from . import conformal as cf
from .dataset import Dataset, DataSlice, SplitIndices, split_dataset
from .estimation import (EffectBoundModel, NuisanceFit, StrategyEvaluation, evaluate_strategy,
                         fit_effect_bounds, fit_nuisances)
from .graphs import Dag, sample_ensemble
from .identification import AdjustmentStrategy, strategies_from_ensemble
from .independence import prune_graph
from .prior import EdgePrior, uniform_prior
from .weighting import (BIC_VARIANTS, StrategyWeights, bic_separation, choose_bic_variant,
                        discretize, normalize_weights, score_graph)

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (42, 123, 456, 789, 1024, 2048, 3333, 7777, 9999, 31415)
VARIANTS = ("full", "uniform_prior", "no_pruning", "top1")
BOUND_COVARIATES = ("pre_treatment", "all")

# Stage names, in execution order, recorded in every report.
STAGES = (
    "split", "sample_ensemble", "prune", "identify", "weight", "fit_nuisances",
    "evaluate_cal", "aggregate", "calibrate", "evaluate_test", "metrics",
)


@dataclass(frozen=True)
class RunConfig:
    K: int = 5
    alpha: float = 0.10
    alpha_ci: float = 0.05
    clip_eps: float = 0.05
    splits: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 42
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    crossfit: bool = False
    crossfit_folds: int = 5
    order_rule: str = "stratified"
    fallback_empty_adjustment: bool = False
    variant: str = "full"
    bic: str = "auto"
    quantile_mode: str = "sentinel"
    bound_covariates: str = "pre_treatment"
    max_edges: Optional[int] = None
    max_attempts: Optional[int] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.bic not in BIC_VARIANTS:
            raise ValueError(f"unknown BIC variant {self.bic!r}")
        if self.bound_covariates not in BOUND_COVARIATES:
            raise ValueError(f"unknown bound covariate set {self.bound_covariates!r}")
        if self.K < 1:
            raise ValueError("K must be at least 1")
        object.__setattr__(self, "splits", tuple(float(s) for s in self.splits))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(obj) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)


@dataclass
class RunReport:
    seed: int
    n: int
    split_sizes: list[int]
    variant: str
    alpha: float
    coverage_pseudo: float
    coverage_cate: Optional[float]
    mean_width: float
    rmse: Optional[float]
    rmse_tau_bar: Optional[float]
    quantile_hat: float
    strategies: list[dict]
    graphs: list[dict]
    n_graphs: int
    n_graphs_excluded: int
    sigma_struct_mean: float
    sigma_struct_max: float
    jensen_gap_mean: float
    delta_n: Optional[float]
    valid_strategy_mass: Optional[float]
    pre_filter_collider_pct: Optional[float]
    bic_variant: str
    working_score: bool
    propensity_range: list[float]
    stages: list[str]
    test_lower: list[float] = field(default_factory=list)
    test_upper: list[float] = field(default_factory=list)
    test_sigma_struct: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunReport":
        return cls(**obj)

    def to_json(self) -> str:
        return dumps(self.to_dict())


def dumps(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


@dataclass(frozen=True)
class FittedEnsemble:
    """Everything learned from the train split: graphs, weights and per-strategy fits."""

    graphs: tuple[Dag, ...]
    graph_strategy: tuple[Optional[int], ...]
    graph_scores: tuple
    weights: StrategyWeights
    fits: tuple[NuisanceFit, ...]
    bound_models: tuple[EffectBoundModel, ...]
    bic_variant: str
    prefilter_post_fraction: Optional[float]
    n_excluded: int


def _flat(x) -> list[float]:
    return [float(v) for v in np.asarray(x, dtype=float).ravel()]


def _dedupe(graphs: Sequence[Dag]) -> list[Dag]:
    seen, out = set(), []
    for g in graphs:
        if g.key() not in seen:
            seen.add(g.key())
            out.append(g)
    return out


def fit_ensemble(config: RunConfig, data: Dataset, prior: EdgePrior, train: DataSlice,
                 forced_strategy: Optional[AdjustmentStrategy] = None,
                 stages: Optional[list] = None) -> FittedEnsemble:
    """Train-only half of the procedure: graphs, weights and nuisance fits."""
    train.require("train")
    stages = [] if stages is None else stages
    matrix = train.full_matrix()
    if config.variant == "uniform_prior":
        prior = uniform_prior(data.names)
    graphs: list[Dag] = []
    assignment: tuple = ()
    scores: tuple = ()
    prefilter = None
    n_excluded = 0
    variant = config.bic
    if variant == "auto":
        variant = choose_bic_variant(matrix, data.d + 1)
    if forced_strategy is not None:
        strategies = (forced_strategy,)
        weights = StrategyWeights(strategies, np.ones(1))
        post = set(data.post_treatment_indices())
        prefilter = 1.0 if post & set(forced_strategy.variables) else 0.0
        stages += ["sample_ensemble", "prune", "identify", "weight"]
    else:
        graphs = sample_ensemble(prior, data.meta, config.K, config.seed, config.max_attempts,
                                 config.order_rule, config.max_edges)
        stages.append("sample_ensemble")
        if config.variant != "no_pruning":
            graphs = [prune_graph(g, matrix, config.alpha_ci) for g in graphs]
        graphs = _dedupe(graphs)
        stages.append("prune")
        ident = strategies_from_ensemble(graphs, data.meta, config.fallback_empty_adjustment)
        stages.append("identify")
        prefilter = ident.prefilter_post_fraction if data.post_treatment_indices() else None
        n_excluded = ident.n_excluded
        codes = discretize(matrix) if variant == "discrete" else None
        scores = tuple(score_graph(g, matrix, prior, variant, codes) if s is not None else None
                       for g, s in zip(graphs, ident.graph_strategy))
        alive = ident.surviving
        weights = normalize_weights([scores[k].log_weight for k in alive],
                                    [ident.graph_strategy[k] for k in alive], ident.strategies)
        assignment = ident.graph_strategy
        if config.variant == "top1":
            best = int(np.argmax(weights.weights))
            chosen = weights.strategies[best]
            weights = StrategyWeights((chosen,), np.ones(1))
            assignment = tuple(0 if s == best else None for s in assignment)
        stages.append("weight")
    columns = None if config.bound_covariates == "pre_treatment" else tuple(range(data.d))
    fits, bounds = [], []
    for s in weights.strategies:
        fit = fit_nuisances(train, s, config.clip_eps, config.crossfit, config.crossfit_folds, config.seed)
        fits.append(fit)
        bounds.append(fit_effect_bounds(train, fit, config.alpha, columns))
    stages.append("fit_nuisances")
    return FittedEnsemble(tuple(graphs), tuple(assignment), scores, weights, tuple(fits), tuple(bounds),
                          variant, prefilter, n_excluded)


def evaluate_rows(fitted: FittedEnsemble, rows: DataSlice) -> tuple[list[StrategyEvaluation], cf.AggregatedEvaluation]:
    evals = [evaluate_strategy(f, b, rows) for f, b in zip(fitted.fits, fitted.bound_models)]
    return evals, cf.aggregate(fitted.weights.weights, evals)


def evaluate_metrics(lower, upper, bar_gamma, true_cate=None, center=None) -> dict:
    """Coverage of the pseudo-outcome (and of the true effect when known), width and RMSE."""
    lower, upper = np.asarray(lower, float), np.asarray(upper, float)
    gamma = np.asarray(bar_gamma, float)
    out = {
        "coverage_pseudo": float(np.mean((lower <= gamma) & (gamma <= upper))),
        "coverage_cate": None,
        "mean_width": float(np.mean(upper - lower)),
        "rmse": None,
        "rmse_tau_bar": None,
    }
    if true_cate is not None:
        tau = np.asarray(true_cate, float)
        out["coverage_cate"] = float(np.mean((lower <= tau) & (tau <= upper)))
        if np.all(np.isfinite(lower)) and np.all(np.isfinite(upper)):
            mid = 0.5 * (lower + upper)
            out["rmse"] = float(np.sqrt(np.mean((mid - tau) ** 2)))
        if center is not None:
            out["rmse_tau_bar"] = float(np.sqrt(np.mean((np.asarray(center, float) - tau) ** 2)))
    return out


def valid_strategy_flags(data: Dataset, strategies: Sequence[AdjustmentStrategy]) -> Optional[list[bool]]:
    """Whether each strategy adjusts for every true confounder and nothing post-treatment."""
    if data.confounders is None:
        return None
    need = {data.covariate_names.index(c) for c in data.confounders}
    post = set(data.post_treatment_indices())
    return [need <= set(s.variables) and not post & set(s.variables) for s in strategies]


def run_pipeline(config: RunConfig, data: Dataset, prior: EdgePrior,
                 forced_strategy: Optional[AdjustmentStrategy] = None,
                 split: Optional[SplitIndices] = None) -> RunReport:
    """Split, build and weight the graph ensemble, fit, calibrate, evaluate on test."""
    stages: list[str] = []
    if split is None:
        split = split_dataset(data, config.splits, config.seed)
    stages.append("split")
    train = data.take(split.train, "train")
    cal = data.take(split.cal, "cal")
    test = data.take(split.test, "test")
    fitted = fit_ensemble(config, data, prior, train, forced_strategy, stages)

    cal_evals, cal_agg = evaluate_rows(fitted, cal)
    stages += ["evaluate_cal", "aggregate"]
    if np.any(cal_agg.scores > cal_agg.jensen_scores):
        raise AssertionError("aggregated score exceeded the averaged per-strategy score")
    model = cf.calibrate(fitted.weights.weights, fitted.bound_models, cal_agg.scores, config.alpha,
                         config.quantile_mode)
    stages.append("calibrate")
    _, test_agg = evaluate_rows(fitted, test)
    lower, upper = cf.interval_from_bounds(test_agg.bar_q_low, test_agg.bar_q_high, model.quantile_hat)
    stages.append("evaluate_test")
    metrics = evaluate_metrics(lower, upper, test_agg.bar_gamma, test.true_cate, test_agg.bar_tau)
    stages.append("metrics")
    logger.debug("stages: %s", " -> ".join(stages))

    names = data.covariate_names
    flags = valid_strategy_flags(data, fitted.weights.strategies)
    graphs = []
    for k, g in enumerate(fitted.graphs):
        s = fitted.graph_strategy[k] if k < len(fitted.graph_strategy) else None
        sc = fitted.graph_scores[k] if fitted.graph_scores else None
        graphs.append({
            "n_edges": len(g.edges),
            "strategy": None if s is None else fitted.weights.strategies[s].key,
            "log_bic": None if sc is None else sc.log_bic,
            "log_structural_prior": None if sc is None else sc.log_structural_prior,
        })
    delta_n = None
    valid_mass = None
    if flags is not None:
        valid_mass = float(np.sum(fitted.weights.weights[np.array(flags, dtype=bool)]))
        alive = [k for k, s in enumerate(fitted.graph_strategy) if s is not None and fitted.graph_scores]
        delta_n = bic_separation([fitted.graph_scores[k].log_bic for k in alive],
                                 [flags[fitted.graph_strategy[k]] for k in alive])
    props = [f.predict(rows.covariates)[0] for f in fitted.fits for rows in (cal, test)]
    props = np.concatenate(props)
    return RunReport(
        seed=config.seed,
        n=data.n,
        split_sizes=list(split.sizes()),
        variant=config.variant if forced_strategy is None else "forced",
        alpha=config.alpha,
        coverage_pseudo=metrics["coverage_pseudo"],
        coverage_cate=metrics["coverage_cate"],
        mean_width=metrics["mean_width"],
        rmse=metrics["rmse"],
        rmse_tau_bar=metrics["rmse_tau_bar"],
        quantile_hat=float(model.quantile_hat),
        strategies=[
            {"key": s.key, "variables": s.names(names), "weight": float(w),
             "source_graph_count": s.source_graph_count,
             "valid": None if flags is None else bool(flags[i])}
            for i, (s, w) in enumerate(zip(fitted.weights.strategies, fitted.weights.weights))
        ],
        graphs=graphs,
        n_graphs=len(fitted.graphs),
        n_graphs_excluded=fitted.n_excluded,
        sigma_struct_mean=float(np.mean(test_agg.sigma_struct)),
        sigma_struct_max=float(np.max(test_agg.sigma_struct)),
        jensen_gap_mean=float(np.mean(cal_agg.jensen_scores - cal_agg.scores)),
        delta_n=delta_n,
        valid_strategy_mass=valid_mass,
        pre_filter_collider_pct=None if fitted.prefilter_post_fraction is None
        else 100.0 * fitted.prefilter_post_fraction,
        bic_variant=fitted.bic_variant,
        working_score=fitted.bic_variant == "gaussian",
        propensity_range=[float(props.min()), float(props.max())],
        stages=stages,
        test_lower=_flat(lower),
        test_upper=_flat(upper),
        test_sigma_struct=_flat(test_agg.sigma_struct),
    )


SUMMARY_FIELDS = ("coverage_pseudo", "coverage_cate", "mean_width", "rmse", "sigma_struct_mean",
                  "jensen_gap_mean", "valid_strategy_mass", "delta_n", "pre_filter_collider_pct")


def summarize(values: Sequence[Optional[float]]) -> Optional[dict]:
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return None
    return {"mean": float(vals.mean()), "std": float(vals.std()), "min": float(vals.min()),
            "max": float(vals.max()), "count": int(vals.size)}


def summarize_reports(reports: Sequence[RunReport]) -> dict:
    return {name: summarize([getattr(r, name) for r in reports]) for name in SUMMARY_FIELDS}


def run_seeds(config: RunConfig, data: Dataset, prior: EdgePrior, seeds: Sequence[int]) -> dict:
    """Same data, one run per seed (split and graph draws follow the seed)."""
    reports = [run_pipeline(replace(config, seed=int(s)), data, prior) for s in seeds]
    return {"per_seed": [r.to_dict() for r in reports], "summary": summarize_reports(reports)}
