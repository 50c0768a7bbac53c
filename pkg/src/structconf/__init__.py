"""Conformal CATE intervals averaged over a weighted ensemble of candidate causal graphs."""

from .dataset import Dataset, gen_synthetic_scm, inject_collider, load_dataset, split_dataset
from .pipeline import RunConfig, RunReport, run_pipeline
from .prior import EdgePrior, load_edge_prior, uniform_prior

__all__ = [
    "Dataset", "EdgePrior", "RunConfig", "RunReport", "gen_synthetic_scm", "inject_collider",
    "load_dataset", "load_edge_prior", "run_pipeline", "split_dataset", "uniform_prior",
]
__version__ = "0.1.0"
