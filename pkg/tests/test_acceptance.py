"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""

from __future__ import annotations

import json
import math
import time
from dataclasses import replace

import numpy as np
import pytest

import structconf.conformal as cf
from structconf.cli import main as cli_main
from structconf.conformal import aggregate, composite_score, interval_from_bounds
from structconf.dataset import gen_synthetic_scm, inject_collider
from structconf.estimation import StrategyEvaluation
from structconf.experiments import (forced_collider_strategy, run_calibration_sweep, run_collider_stress,
                                    run_washout, synthetic_prior)
from structconf.identification import AdjustmentStrategy, is_valid_backdoor, minimum_backdoor_set
from structconf.independence import partial_correlation, prune_graph
from structconf.pipeline import DEFAULT_SEEDS, RunConfig, run_pipeline, run_seeds
from structconf.graphs import Dag
from structconf.weighting import bic_discrete, bic_gaussian, normalize_weights
from conftest import make_dag, random_backdoor_dag
from oracles import min_backdoor_exhaustive, partial_corr_normal_equations

COVERAGE_SEEDS = range(1000, 1200)
WASHOUT_SEEDS = range(20)


@pytest.fixture
def emit(capsys):
    def _emit(number: int, ok: bool, detail: str, seconds: float) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {number:2d}: {'PASS' if ok else 'FAIL'} | {detail} | {seconds:.1f}s")
    return _emit


class JensenRecorder:
    """Wraps the aggregation step to count every aggregated point and violation."""

    def __init__(self):
        self.points = 0
        self.violations = 0
        self._inner = cf.aggregate

    def __call__(self, weights, evals):
        agg = self._inner(weights, evals)
        self.points += agg.scores.size
        self.violations += int(np.sum(agg.scores > agg.jensen_scores))
        return agg


@pytest.fixture(scope="module")
def jensen_log():
    recorder = JensenRecorder()
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(cf, "aggregate", recorder)
        yield recorder


@pytest.fixture(scope="module")
def coverage_runs(jensen_log):
    start = time.perf_counter()
    reports = []
    for s in COVERAGE_SEEDS:
        data = gen_synthetic_scm(500, s)
        reports.append(run_pipeline(RunConfig(seed=s), data, synthetic_prior(data)))
    return reports, time.perf_counter() - start


def test_criterion_01_coverage(coverage_runs, emit):
    reports, seconds = coverage_runs
    cov = float(np.mean([r.coverage_pseudo for r in reports]))
    ok = 0.885 <= cov <= 0.965 and seconds < 300
    emit(1, ok, f"mean pseudo-outcome coverage {cov:.4f} over {len(reports)} reps (target [0.885, 0.965])",
         seconds)
    assert ok


def _random_evaluations(rng, k, m):
    evals = []
    for _ in range(k):
        lo = rng.normal(scale=2.0, size=m)
        evals.append(StrategyEvaluation(rng.normal(scale=3.0, size=m), lo, lo + rng.exponential(size=m),
                                        rng.normal(size=m)))
    return evals


def test_criterion_02_jensen(coverage_runs, jensen_log, emit):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    draws, bad = 0, 0
    while draws < 1_000_000:
        k = int(rng.integers(1, 7))
        m = 50_000
        agg = aggregate(rng.dirichlet(np.ones(k)), _random_evaluations(rng, k, m))
        bad += int(np.sum(agg.scores > agg.jensen_scores))
        draws += m
    ok = bad == 0 and jensen_log.violations == 0 and jensen_log.points > 0
    emit(2, ok, f"{bad} violations in {draws} random instances; {jensen_log.violations} in "
         f"{jensen_log.points} aggregated cal/test points of the criterion-1 runs", time.perf_counter() - start)
    assert ok


def test_criterion_03_interval_score_equivalence(emit):
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    m = 50_000
    gamma = rng.normal(size=m)
    lo = rng.normal(size=m)
    hi = lo + rng.exponential(size=m)
    q = rng.normal(scale=0.7, size=m)
    # Dyadic grid: every sum is exact, so boundary ties are hit on purpose.
    grid = np.arange(-16, 17) / 8.0
    g_gamma, g_lo, g_width, g_q = (rng.choice(grid, m) for _ in range(4))
    g_hi = g_lo + np.abs(g_width)
    gamma, lo, hi, q = (np.concatenate(p) for p in ((gamma, g_gamma), (lo, g_lo), (hi, g_hi), (q, g_q)))
    a, b = interval_from_bounds(lo, hi, q)
    inside = (a <= gamma) & (gamma <= b)
    by_score = composite_score(gamma, lo, hi) <= q
    mismatches = int(np.sum(inside != by_score))
    ties = int(np.sum(composite_score(gamma, lo, hi) == q))
    ok = mismatches == 0 and inside.size == 100_000
    emit(3, ok, f"{mismatches} mismatches in {inside.size} cases ({ties} exact ties)", time.perf_counter() - start)
    assert ok


def test_criterion_04_backdoor_oracle(emit):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    disagree = 0
    for _ in range(1000):
        g = random_backdoor_dag(rng, 6)
        n = len(g.nodes)
        covs = [v for v in range(n) if v not in (g.treatment, g.outcome)]
        got = minimum_backdoor_set(g)
        want = min_backdoor_exhaustive(n, g.edges, g.treatment, g.outcome, covs)
        disagree += got != want or (got is not None and not is_valid_backdoor(g, got))
    seconds = time.perf_counter() - start
    ok = disagree == 0 and seconds < 60
    emit(4, ok, f"{1000 - disagree}/1000 DAGs agree with exhaustive enumeration", seconds)
    assert ok


def test_criterion_05_partial_correlation(emit):
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(500):
        n = int(rng.integers(20, 300))
        d = int(rng.integers(3, 8))
        data = rng.normal(size=(n, d)) @ (np.triu(rng.normal(size=(d, d)), 1) + np.eye(d))
        x, y = (int(v) for v in rng.choice(d, 2, replace=False))
        rest = [j for j in range(d) if j not in (x, y)]
        cond = [int(c) for c in rng.choice(rest, int(rng.integers(0, len(rest) + 1)), replace=False)]
        worst = max(worst, abs(partial_correlation(x, y, cond, data)
                               - partial_corr_normal_equations(data, x, y, cond)))
    g = make_dag(["A"], [("A", "Y"), ("T", "Y")])
    removed = 0
    for seed in range(2000):
        data = np.random.default_rng(seed).normal(size=(200, 3))
        removed += (0, 2) not in prune_graph(g, data, 0.05).edges
    rate = removed / 2000
    ok = worst <= 1e-8 and abs(rate - 0.95) <= 0.03
    emit(5, ok, f"max oracle gap {worst:.2e} over 500 instances; null-edge removal {rate:.4f} (target 0.95 +/- 0.03)",
         time.perf_counter() - start)
    assert ok


def test_criterion_06_collider_stress(emit):
    start = time.perf_counter()
    out = run_collider_stress(RunConfig(), n=1000, seeds=DEFAULT_SEEDS)
    seconds = time.perf_counter() - start
    m, v = out["method"], out["naive"]
    cov_m, cov_n = m["coverage_cate"]["mean"], v["coverage_cate"]["mean"]
    rmse_m, rmse_n = m["rmse"]["mean"], v["rmse"]["mean"]
    checks = {
        "excluded": out["collider_excluded_all_runs"],
        "coverage": cov_n < cov_m,
        "rmse": rmse_n > rmse_m,
        "runtime": seconds < 180,
    }
    failed = [name for name, passed in checks.items() if not passed]
    emit(6, not failed, f"X_col excluded in all runs={checks['excluded']}; CATE coverage naive {cov_n:.3f} vs "
         f"method {cov_m:.3f}; RMSE naive {rmse_n:.3f} vs method {rmse_m:.3f}"
         + (f"; failed: {', '.join(failed)}" if failed else ""), seconds)
    assert not failed


def test_criterion_07_prior_washout(emit):
    start = time.perf_counter()
    out = run_washout(RunConfig(), n_list=(100, 500, 2000), seeds=WASHOUT_SEEDS, priors=("true", "inverted"))
    rows = out["priors"]["true"]
    mass = [r["valid_strategy_mass"] for r in rows]
    cov_true = rows[-1]["coverage_pseudo"]
    cov_inv = out["priors"]["inverted"][-1]["coverage_pseudo"]
    checks = {
        "monotone": all(a <= b for a, b in zip(mass, mass[1:])),
        "mass_2000": mass[-1] >= 0.95,
        "inverted": abs(cov_inv - cov_true) <= 0.03,
    }
    failed = [name for name, passed in checks.items() if not passed]
    emit(7, not failed, "valid mass " + "/".join(f"{x:.3f}" for x in mass) + " at n=100/500/2000; "
         f"coverage at n=2000 true {cov_true:.3f} vs inverted {cov_inv:.3f}"
         + (f"; failed: {', '.join(failed)}" if failed else ""), time.perf_counter() - start)
    assert not failed


def test_criterion_08_calibration_sweep(emit):
    start = time.perf_counter()
    alphas = (0.01, 0.05, 0.10, 0.20, 0.30, 0.50)
    broken = 0
    for seed in DEFAULT_SEEDS:
        data = gen_synthetic_scm(1000, seed)
        rows = run_calibration_sweep(RunConfig(seed=seed), data, synthetic_prior(data), alphas)["rows"]
        for a, b in zip(rows, rows[1:]):
            broken += a["coverage_pseudo"] < b["coverage_pseudo"] or a["mean_width"] < b["mean_width"]
    ok = broken == 0
    emit(8, ok, f"{broken} monotonicity breaks across {len(DEFAULT_SEEDS)} fixed datasets", time.perf_counter() - start)
    assert ok


def test_criterion_09_weighting_identities(emit):
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    worst_shift, worst_sum = 0.0, 0.0
    for _ in range(2000):
        k = int(rng.integers(1, 9))
        n_strat = int(rng.integers(1, k + 1))
        groups = list(range(n_strat)) + [int(g) for g in rng.integers(0, n_strat, k - n_strat)]
        strategies = tuple(AdjustmentStrategy((j,)) for j in range(n_strat))
        logw = rng.normal(scale=20.0, size=k)
        base = normalize_weights(logw, groups, strategies).weights
        for shift in (-1e3, 1e3):
            moved = normalize_weights(logw + shift, groups, strategies).weights
            worst_shift = max(worst_shift, float(np.max(np.abs(moved - base))))
        worst_sum = max(worst_sum, abs(math.fsum(base) - 1.0))
    two = (AdjustmentStrategy((0,)), AdjustmentStrategy((1,)))
    collapse = tuple(float(w) for w in normalize_weights([0.0, math.log(2.0), 0.0], [0, 0, 1], two).weights)
    ty = Dag(("T", "Y"), (0, 1), frozenset(), 0, 1)
    gauss = bic_gaussian(ty, np.array([[-1.0, -1.0], [1.0, 1.0]])) / 2
    disc = bic_discrete(ty, np.column_stack([np.r_[np.zeros(7), np.ones(3)], np.zeros(10)]))
    ok = (worst_shift <= 1e-12 and worst_sum <= 1e-12 and collapse == (0.75, 0.25)
          and abs(gauss + 3.5311) <= 1e-4 and abs(disc + 7.2599) <= 1e-4)
    emit(9, ok, f"shift gap {worst_shift:.1e}; sum gap {worst_sum:.1e}; collapse {collapse}; "
         f"Gaussian BIC {gauss:.4f}; discrete BIC {disc:.4f}", time.perf_counter() - start)
    assert ok


def test_criterion_10_determinism(tmp_path, emit):
    start = time.perf_counter()
    data = gen_synthetic_scm(500, 42)
    prior = synthetic_prior(data)
    collider = inject_collider(data, 42)
    configs = [RunConfig(), RunConfig(crossfit=True), RunConfig(K=10, seed=7), RunConfig(order_rule="appendix"),
               RunConfig(bound_covariates="all")]
    configs += [RunConfig(variant=v) for v in ("uniform_prior", "no_pruning", "top1")]
    mismatched = 0
    for cfg in configs:
        mismatched += run_pipeline(cfg, data, prior).to_json() != run_pipeline(cfg, data, prior).to_json()
    forced = forced_collider_strategy(collider)
    mismatched += (run_pipeline(RunConfig(), collider, prior, forced).to_json()
                   != run_pipeline(RunConfig(), collider, prior, forced).to_json())
    cfg = replace(RunConfig(), seeds=(1, 2, 3))
    mismatched += json.dumps(run_seeds(cfg, data, prior, cfg.seeds)) != json.dumps(run_seeds(cfg, data, prior, cfg.seeds))
    csv, prior_path = tmp_path / "d.csv", tmp_path / "p.json"
    cli_main(["synth", "--n", "300", "--out", str(csv), "--prior-out", str(prior_path)])
    outputs = []
    for name in ("a.json", "b.json"):
        cli_main(["run", "--data", str(csv), "--meta", str(tmp_path / "d.meta.json"), "--prior", str(prior_path),
                  "--out", str(tmp_path / name)])
        outputs.append((tmp_path / name).read_bytes())
    mismatched += outputs[0] != outputs[1]
    total = len(configs) + 3
    ok = mismatched == 0
    emit(10, ok, f"{total - mismatched}/{total} repeated runs byte-identical", time.perf_counter() - start)
    assert ok
