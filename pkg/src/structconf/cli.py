"""Command-line entry point: run, synth, experiment and elicit."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .dataset import gen_synthetic_scm, inject_collider, load_dataset, save_dataset
from .experiments import (DEFAULT_ALPHAS, run_ablations, run_calibration_sweep, run_collider_stress,
                          run_k_sweep, run_washout, scm_factory, synthetic_prior)
from .pipeline import BOUND_COVARIATES, VARIANTS, RunConfig, dumps, run_pipeline, run_seeds
from .prior import elicit_prior_http, load_edge_prior, uniform_prior

logger = logging.getLogger("structconf")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(","))


def _emit(obj: dict, out: Optional[str]) -> None:
    text = dumps(obj) + "\n"
    if out:
        Path(out).write_text(text)
        logger.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        K=args.k, alpha=args.alpha, alpha_ci=args.alpha_ci, clip_eps=args.clip_eps,
        splits=args.splits, seed=args.seed, crossfit=args.crossfit, order_rule=args.order_rule,
        fallback_empty_adjustment=args.fallback_empty_adjustment, variant=args.variant,
        max_edges=args.max_edges, bound_covariates=args.bound_covariates,
    )
    if args.seeds:
        cfg = replace(cfg, seeds=args.seeds)
    return cfg


def cmd_run(args) -> int:
    data = load_dataset(args.data, args.meta)
    prior = load_edge_prior(args.prior, data.names) if args.prior else uniform_prior(data.names)
    cfg = _config_from_args(args)
    if args.seeds:
        _emit(run_seeds(cfg, data, prior, cfg.seeds), args.out)
    else:
        _emit(run_pipeline(cfg, data, prior).to_dict(), args.out)
    return 0


def cmd_synth(args) -> int:
    data = gen_synthetic_scm(args.n, args.seed)
    if args.kind == "collider":
        data = inject_collider(data, args.seed)
    out = Path(args.out)
    meta = Path(args.meta) if args.meta else out.with_suffix(".meta.json")
    save_dataset(data, out, meta, f"synthetic {args.kind} data, n={args.n}, seed={args.seed}")
    if args.prior_out:
        synthetic_prior(data).save(args.prior_out)
    logger.info("wrote %s and %s", out, meta)
    return 0


def cmd_experiment(args) -> int:
    options = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = RunConfig.from_dict(options.get("run", {}))
    seeds = tuple(options.get("seeds", ())) or cfg.seeds
    n = int(options.get("n", 1000))
    if args.name == "collider":
        result = run_collider_stress(cfg, n, seeds)
    elif args.name == "washout":
        result = run_washout(cfg, options.get("n_list", (100, 500, 2000)), seeds)
    elif args.name == "calibration":
        data = gen_synthetic_scm(n, cfg.seed)
        result = run_calibration_sweep(cfg, data, synthetic_prior(data), options.get("alphas", DEFAULT_ALPHAS))
    elif args.name == "ksweep":
        result = run_k_sweep(cfg, scm_factory(n), synthetic_prior, options.get("k_list", (1, 3, 5, 10)), seeds)
    else:
        result = run_ablations(cfg, scm_factory(n), synthetic_prior, options.get("variants", VARIANTS), seeds)
    _emit(result, args.out)
    return 0


def cmd_elicit(args) -> int:
    data = load_dataset(args.data, args.meta)
    description = json.loads(Path(args.meta).read_text()).get("description", "")
    prior = elicit_prior_http(args.endpoint, data.names, description, data.treatment_name,
                              data.outcome_name, retries=args.retries, model=args.model)
    prior.save(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="structconf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the pipeline on a CSV dataset")
    run.add_argument("--data", required=True)
    run.add_argument("--meta", required=True)
    run.add_argument("--prior", help="edge prior JSON; uniform 0.5 when omitted")
    run.add_argument("--k", type=int, default=5)
    run.add_argument("--alpha", type=float, default=0.10)
    run.add_argument("--alpha-ci", type=float, default=0.05)
    run.add_argument("--clip-eps", type=float, default=0.05)
    run.add_argument("--splits", type=_floats, default=(0.6, 0.2, 0.2))
    run.add_argument("--seed", type=int, default=42)
    run.add_argument("--seeds", type=_ints, default=None, help="comma-separated; one run per seed")
    run.add_argument("--variant", choices=VARIANTS, default="full")
    run.add_argument("--crossfit", action="store_true")
    run.add_argument("--order-rule", choices=("stratified", "appendix"), default="stratified")
    run.add_argument("--fallback-empty-adjustment", action="store_true")
    run.add_argument("--max-edges", type=int, default=None)
    run.add_argument("--bound-covariates", choices=BOUND_COVARIATES, default="pre_treatment",
                     help="regressors of the effect band model")
    run.add_argument("--out")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic dataset")
    synth.add_argument("--kind", choices=("scm", "collider"), default="scm")
    synth.add_argument("--n", type=int, default=1000)
    synth.add_argument("--seed", type=int, default=42)
    synth.add_argument("--out", required=True)
    synth.add_argument("--meta", help="metadata path (default: <out>.meta.json)")
    synth.add_argument("--prior-out", help="also write a role-based edge prior")
    synth.set_defaults(func=cmd_synth)

    exp = sub.add_parser("experiment", help="run an experiment driver")
    exp.add_argument("--name", required=True, choices=("collider", "washout", "calibration", "ksweep", "ablation"))
    exp.add_argument("--config", help="JSON with optional keys run, n, seeds, n_list, alphas, k_list, variants")
    exp.add_argument("--out")
    exp.set_defaults(func=cmd_experiment)

    el = sub.add_parser("elicit", help="query a chat endpoint for an edge prior")
    el.add_argument("--data", required=True)
    el.add_argument("--meta", required=True)
    el.add_argument("--endpoint", required=True)
    el.add_argument("--model", default="default")
    el.add_argument("--retries", type=int, default=5)
    el.add_argument("--out", required=True)
    el.set_defaults(func=cmd_elicit)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
