"""Tabular ingestion, seeded splits and synthetic data generators.

A :class:`Dataset` always stores the covariate block, the binary treatment and
the real outcome separately, together with one :class:`VariableMeta` per
variable (covariates first, then treatment, then outcome). Graph code relies on
that node order: covariate ``j`` is node ``j``, the treatment is node ``d`` and
the outcome is node ``d + 1``.
"""

from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd


class DatasetError(ValueError):
    """Raised for malformed data files, metadata or split requests."""


class TemporalStatus(str, enum.Enum):
    PRE_TREATMENT = "pre_treatment"
    TREATMENT = "treatment"
    OUTCOME = "outcome"
    POST_TREATMENT = "post_treatment"


@dataclass(frozen=True)
class VariableMeta:
    name: str
    temporal_status: TemporalStatus = TemporalStatus.PRE_TREATMENT


@dataclass(frozen=True)
class Dataset:
    """Covariates, binary treatment and outcome with per-variable metadata.

    ``true_edges`` and ``confounders`` are only known for synthetic data; they
    let experiment drivers build role-based priors and score strategies
    against the generating graph.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    meta: tuple[VariableMeta, ...]
    true_cate: Optional[np.ndarray] = None
    true_edges: Optional[tuple[tuple[str, str], ...]] = None
    confounders: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim != 2:
            raise DatasetError("covariates must be a 2-D matrix")
        n, d = x.shape
        t = np.asarray(self.treatment, dtype=float)
        y = np.asarray(self.outcome, dtype=float)
        if t.shape != (n,) or y.shape != (n,):
            raise DatasetError("treatment and outcome must be length-n vectors")
        if n < 10 or d < 1:
            raise DatasetError(f"need n >= 10 and d >= 1, got n={n}, d={d}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise DatasetError("NaN or infinite cells are not allowed")
        if not np.all((t == 0) | (t == 1)):
            raise DatasetError("non-binary treatment")
        _check_meta(self.meta, d)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)
        object.__setattr__(self, "meta", tuple(self.meta))
        if self.true_cate is not None:
            tau = np.asarray(self.true_cate, dtype=float)
            if tau.shape != (n,):
                raise DatasetError("true_cate must be a length-n vector")
            object.__setattr__(self, "true_cate", tau)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def d(self) -> int:
        return self.covariates.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.meta)

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return self.names[: self.d]

    @property
    def treatment_name(self) -> str:
        return self.meta[self.d].name

    @property
    def outcome_name(self) -> str:
        return self.meta[self.d + 1].name

    def post_treatment_indices(self) -> tuple[int, ...]:
        return tuple(
            j for j, m in enumerate(self.meta[: self.d])
            if m.temporal_status is TemporalStatus.POST_TREATMENT
        )

    def pre_treatment_indices(self) -> tuple[int, ...]:
        return tuple(
            j for j, m in enumerate(self.meta[: self.d])
            if m.temporal_status is TemporalStatus.PRE_TREATMENT
        )

    def full_matrix(self) -> np.ndarray:
        """Columns aligned with graph nodes: covariates, treatment, outcome."""
        return np.column_stack([self.covariates, self.treatment, self.outcome])

    def take(self, indices: Sequence[int], tag: str) -> "DataSlice":
        idx = np.asarray(indices, dtype=int)
        tau = None if self.true_cate is None else self.true_cate[idx]
        return DataSlice(
            covariates=self.covariates[idx],
            treatment=self.treatment[idx],
            outcome=self.outcome[idx],
            tag=tag,
            indices=idx,
            true_cate=tau,
            pre_treatment=self.pre_treatment_indices(),
        )


@dataclass(frozen=True)
class DataSlice:
    """Rows of a dataset carrying the split they came from.

    Fitting code refuses anything but ``"train"`` rows and evaluation code
    refuses ``"train"`` rows, so calibration data cannot leak into the fit.
    """

    covariates: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    tag: str
    indices: np.ndarray
    true_cate: Optional[np.ndarray] = None
    pre_treatment: tuple[int, ...] = ()

    def __len__(self) -> int:
        return self.covariates.shape[0]

    def full_matrix(self) -> np.ndarray:
        return np.column_stack([self.covariates, self.treatment, self.outcome])

    def require(self, *tags: str) -> None:
        if self.tag not in tags:
            raise DatasetError(f"rows tagged {self.tag!r} used where {tags} required")


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    cal: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.cal), len(self.test)


def _check_meta(meta: Sequence[VariableMeta], d: int) -> None:
    if len(meta) != d + 2:
        raise DatasetError(f"expected {d + 2} metadata entries, got {len(meta)}")
    names = [m.name for m in meta]
    if any(not isinstance(s, str) or not s for s in names):
        raise DatasetError("variable names must be non-empty strings")
    if len(set(names)) != len(names):
        raise DatasetError("duplicate variable names")
    statuses = [m.temporal_status for m in meta]
    if statuses.count(TemporalStatus.TREATMENT) != 1 or statuses.count(TemporalStatus.OUTCOME) != 1:
        raise DatasetError("exactly one treatment and one outcome variable required")
    if meta[d].temporal_status is not TemporalStatus.TREATMENT:
        raise DatasetError("treatment metadata must follow the covariates")
    if meta[d + 1].temporal_status is not TemporalStatus.OUTCOME:
        raise DatasetError("outcome metadata must be last")


def load_dataset(path: str | Path, meta_path: str | Path) -> Dataset:
    """Read a comma-delimited table and bind its columns to JSON metadata.

    The metadata file names the treatment and outcome columns and optionally
    lists ``post_treatment`` columns; every other column is a pre-treatment
    covariate. Covariates keep their file order.
    """
    with open(meta_path) as fh:
        raw = json.load(fh)
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), [])
    if len(set(header)) != len(header):
        raise DatasetError("duplicate variable names")
    frame = pd.read_csv(path, float_precision="round_trip")
    columns = [str(c) for c in frame.columns]
    t_name, y_name = raw.get("treatment"), raw.get("outcome")
    for role, name in (("treatment", t_name), ("outcome", y_name)):
        if name not in columns:
            raise DatasetError(f"missing {role} column {name!r}")
    post = set(raw.get("post_treatment", []))
    unknown = post - set(columns)
    if unknown:
        raise DatasetError(f"post_treatment names not in file: {sorted(unknown)}")
    if frame.isna().to_numpy().any():
        raise DatasetError("NaN cells are not allowed")
    cov_names = [c for c in columns if c not in (t_name, y_name)]
    meta = [
        VariableMeta(c, TemporalStatus.POST_TREATMENT if c in post else TemporalStatus.PRE_TREATMENT)
        for c in cov_names
    ]
    meta += [VariableMeta(t_name, TemporalStatus.TREATMENT), VariableMeta(y_name, TemporalStatus.OUTCOME)]
    t = frame[t_name].to_numpy(dtype=float)
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise DatasetError("non-binary treatment")
    return Dataset(
        covariates=frame[cov_names].to_numpy(dtype=float),
        treatment=t,
        outcome=frame[y_name].to_numpy(dtype=float),
        meta=tuple(meta),
    )


def save_dataset(data: Dataset, path: str | Path, meta_path: str | Path, description: str = "") -> None:
    frame = pd.DataFrame(data.covariates, columns=list(data.covariate_names))
    frame[data.treatment_name] = data.treatment.astype(int)
    frame[data.outcome_name] = data.outcome
    frame.to_csv(path, index=False, float_format="%.17g")
    post = [data.covariate_names[j] for j in data.post_treatment_indices()]
    with open(meta_path, "w") as fh:
        json.dump(
            {"treatment": data.treatment_name, "outcome": data.outcome_name,
             "post_treatment": post, "description": description},
            fh, indent=2,
        )


def split_dataset(data: Dataset, fractions: Sequence[float] = (0.6, 0.2, 0.2), seed: int = 0) -> SplitIndices:
    """Seeded train/cal/test partition.

    Calibration and test sizes are ``floor(fraction * n)``; the remainder goes
    to train. Raises rather than redrawing when train misses a treatment arm.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must be three positive numbers summing to 1, got {fractions}")
    n = data.n
    n_cal = int(math.floor(fr[1] * n + 1e-9))
    n_test = int(math.floor(fr[2] * n + 1e-9))
    n_train = n - n_cal - n_test
    if min(n_train, n_cal, n_test) < 1:
        raise DatasetError(f"empty split for n={n} and fractions {fr}")
    perm = np.random.default_rng(seed).permutation(n)
    train = np.sort(perm[:n_train])
    cal = np.sort(perm[n_train:n_train + n_cal])
    test = np.sort(perm[n_train + n_cal:])
    arms = np.unique(data.treatment[train])
    if arms.size < 2:
        raise DatasetError("treatment arm absent from train split; choose another seed")
    return SplitIndices(train=train, cal=cal, test=test)


# Synthetic structural causal model with known roles.
N_CONFOUNDERS = 5
N_COLLIDERS = 4
N_NOISE = 4
PROPENSITY_COEF = 0.4
OUTCOME_COEF = 1.0
OUTCOME_NOISE = 1.0
COLLIDER_T = 0.3
COLLIDER_Y = 0.4
COLLIDER_NOISE = 0.5
OVERLAP_CLIP = 0.05


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def synthetic_cate(confounders: np.ndarray) -> np.ndarray:
    return 1.0 + 0.5 * confounders[:, 0]


def gen_synthetic_scm(n: int, seed: int) -> Dataset:
    """Draw ``n`` units from the five-confounder / four-collider / four-noise SCM.

    Columns are ``C1..C5`` (confounders of treatment and outcome), ``K1..K4``
    (``K = 0.3 T + 0.4 Y + e``, marked post-treatment) and ``N1..N4``
    (independent noise). The treatment effect is ``1 + 0.5 * C1``.
    """
    if n < 20:
        raise DatasetError(f"synthetic SCM needs n >= 20, got {n}")
    rng = np.random.default_rng(seed)
    c = rng.standard_normal((n, N_CONFOUNDERS))
    e = np.clip(_sigmoid(PROPENSITY_COEF * c.sum(axis=1)), OVERLAP_CLIP, 1 - OVERLAP_CLIP)
    t = (rng.random(n) < e).astype(float)
    tau = synthetic_cate(c)
    y = OUTCOME_COEF * c.sum(axis=1) + tau * t + OUTCOME_NOISE * rng.standard_normal(n)
    k = COLLIDER_T * t[:, None] + COLLIDER_Y * y[:, None] + COLLIDER_NOISE * rng.standard_normal((n, N_COLLIDERS))
    noise = rng.standard_normal((n, N_NOISE))

    c_names = [f"C{j + 1}" for j in range(N_CONFOUNDERS)]
    k_names = [f"K{j + 1}" for j in range(N_COLLIDERS)]
    n_names = [f"N{j + 1}" for j in range(N_NOISE)]
    meta = [VariableMeta(s) for s in c_names]
    meta += [VariableMeta(s, TemporalStatus.POST_TREATMENT) for s in k_names]
    meta += [VariableMeta(s) for s in n_names]
    meta += [VariableMeta("T", TemporalStatus.TREATMENT), VariableMeta("Y", TemporalStatus.OUTCOME)]
    edges = [(s, "T") for s in c_names] + [(s, "Y") for s in c_names] + [("T", "Y")]
    edges += [("T", s) for s in k_names] + [("Y", s) for s in k_names]
    return Dataset(
        covariates=np.column_stack([c, k, noise]),
        treatment=t,
        outcome=y,
        meta=tuple(meta),
        true_cate=tau,
        true_edges=tuple(edges),
        confounders=tuple(c_names),
    )


def inject_collider(data: Dataset, seed: int, name: str = "X_col") -> Dataset:
    """Append ``X_col = 0.3 T + 0.4 Y + e`` with ``e ~ N(0, 0.5^2)``, marked post-treatment."""
    if name in data.names:
        raise DatasetError(f"column {name!r} already exists")
    rng = np.random.default_rng(seed)
    xcol = COLLIDER_T * data.treatment + COLLIDER_Y * data.outcome + COLLIDER_NOISE * rng.standard_normal(data.n)
    meta = list(data.meta[: data.d]) + [VariableMeta(name, TemporalStatus.POST_TREATMENT)] + list(data.meta[data.d:])
    edges = None
    if data.true_edges is not None:
        edges = data.true_edges + ((data.treatment_name, name), (data.outcome_name, name))
    return replace(
        data,
        covariates=np.column_stack([data.covariates, xcol]),
        meta=tuple(meta),
        true_edges=edges,
    )
