"""Data generation and the Monte-Carlo replication harness."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import em_nr, em_ols
from .em_ols import DEGENERATE_SLOPE, FitConfig
from .em_nr import NRConfig
from .model import ItemParams, ModelKind
from .patterns import tabulate

# Item parameter grids used throughout the simulation studies.
DEFAULT_TRUE_B = (-3.0, -1.5, 0.0, 1.5, 3.0)
DEFAULT_TRUE_A = (0.3, 0.725, 1.15, 1.575, 2.0)
DEFAULT_QUAD_SWEEP = (2, 3, 4, 5, 8, 10, 15)

# Estimates outside these ranges count as outliers.
B_OUTLIER_LIMIT = 5.0
A_OUTLIER_LOW = 0.1
A_OUTLIER_HIGH = 3.0

ESTIMATORS = ("ols", "nr")


@dataclass(frozen=True)
class StudyDesign:
    """One Monte-Carlo study: fixed truth, sample size, and T sweep."""

    true_params: tuple[ItemParams, ...]
    n_persons: int
    reps: int
    model: ModelKind
    t_list: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError(f"reps must be >= 1, got {self.reps}")
        if self.n_persons < 1:
            raise ValueError(f"n_persons must be >= 1, got {self.n_persons}")
        if not self.t_list:
            raise ValueError("t_list must be nonempty")
        if not self.true_params:
            raise ValueError("true_params must be nonempty")


@dataclass(frozen=True)
class StudyRow:
    """Aggregated estimates for one item under one estimator and node count."""

    item: int
    estimator: str
    n_quads: int
    true_a: float
    true_b: float
    mean_a: float
    mean_b: float
    rmse_a: float
    rmse_b: float
    filtered_mean_a: float
    filtered_mean_b: float
    outliers_a: int
    outliers_b: int
    outliers: int
    reps: int


@dataclass(frozen=True)
class TimingStats:
    estimator: str
    n_quads: int
    fits: int
    mean_ms: float
    min_ms: float
    max_ms: float


@dataclass(frozen=True)
class StudySummary:
    design: StudyDesign
    rows: tuple[StudyRow, ...]
    timing: tuple[TimingStats, ...]
    failures: int


@dataclass(frozen=True)
class _FitRecord:
    rep: int
    estimator: str
    n_quads: int
    ok: bool
    a_hat: tuple[float, ...]
    b_hat: tuple[float, ...]
    degenerate: tuple[bool, ...]
    converged: bool
    wall_ms: float
    error: str = ""


def generate(
    true_params: Sequence[ItemParams], n_persons: int, seed
) -> np.ndarray:
    """Simulate an N x I response matrix under the model.

    Abilities are standard normal; given an ability, responses are
    independent Bernoulli draws with the item response probabilities.
    Deterministic for a fixed seed.
    """
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(n_persons)
    a = np.array([p.a for p in true_params])
    b = np.array([p.b for p in true_params])
    z = a[None, :] * (theta[:, None] - b[None, :])
    prob = np.empty_like(z)
    pos = z >= 0
    prob[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    prob[~pos] = ez / (1.0 + ez)
    return (rng.random(z.shape) < prob).astype(np.uint8)


def is_outlier(p: ItemParams, model: ModelKind, degenerate: bool = False) -> bool:
    """Whether an estimate falls outside the acceptable parameter ranges.

    Difficulties with |b| >= 5 are outliers for both models; the 2PL
    additionally rejects discriminations outside (0.1, 3).  A degenerate
    OLS slope always counts.
    """
    if degenerate:
        return True
    if abs(p.b) >= B_OUTLIER_LIMIT:
        return True
    if model is ModelKind.TWO_PL and (p.a <= A_OUTLIER_LOW or p.a >= A_OUTLIER_HIGH):
        return True
    return False


def filter_outliers(
    estimates: Sequence[ItemParams],
    model: ModelKind,
    degenerate: Sequence[bool] | None = None,
) -> list[ItemParams]:
    """Keep only the non-outlier estimates (idempotent)."""
    if degenerate is None:
        degenerate = [False] * len(estimates)
    return [
        p for p, d in zip(estimates, degenerate) if not is_outlier(p, model, d)
    ]


def resolve_workers(flag: int | None = None) -> int:
    """Worker count: explicit flag wins, then IRT_THREADS, then 1."""
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("IRT_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _fit_once(data, estimator: str, n_quads: int, model: ModelKind):
    if estimator == "ols":
        cfg = FitConfig(model=model, n_quads=n_quads)
        return em_ols.fit(data, cfg)
    if estimator == "nr":
        cfg = NRConfig(model=model, n_quads=n_quads)
        return em_nr.fit_nr(data, cfg)
    raise ValueError(f"unknown estimator {estimator!r}")


def _run_replication(args) -> list[_FitRecord]:
    rep, design, estimators, seed = args
    matrix = generate(design.true_params, design.n_persons, seed)
    data = tabulate(matrix)
    records = []
    for estimator in estimators:
        for n_quads in design.t_list:
            start = time.perf_counter()
            try:
                result = _fit_once(data, estimator, n_quads, design.model)
            except Exception as exc:  # per-fit failures never abort the study
                wall = (time.perf_counter() - start) * 1e3
                records.append(
                    _FitRecord(
                        rep=rep,
                        estimator=estimator,
                        n_quads=n_quads,
                        ok=False,
                        a_hat=(),
                        b_hat=(),
                        degenerate=(),
                        converged=False,
                        wall_ms=wall,
                        error=f"{type(exc).__name__}: {exc}",
                    )
                )
                continue
            wall = (time.perf_counter() - start) * 1e3
            records.append(
                _FitRecord(
                    rep=rep,
                    estimator=estimator,
                    n_quads=n_quads,
                    ok=True,
                    a_hat=tuple(p.a for p in result.params),
                    b_hat=tuple(p.b for p in result.params),
                    degenerate=tuple(
                        DEGENERATE_SLOPE in f for f in result.flags
                    ),
                    converged=result.converged,
                    wall_ms=wall,
                )
            )
    return records


def _aggregate(
    design: StudyDesign, estimators: tuple[str, ...], records: list[_FitRecord]
) -> StudySummary:
    rows: list[StudyRow] = []
    timing: list[TimingStats] = []
    failures = sum(1 for r in records if not r.ok)

    for estimator in estimators:
        for n_quads in design.t_list:
            cell = sorted(
                (
                    r
                    for r in records
                    if r.ok and r.estimator == estimator and r.n_quads == n_quads
                ),
                key=lambda r: r.rep,
            )
            walls = [
                r.wall_ms
                for r in records
                if r.estimator == estimator and r.n_quads == n_quads
            ]
            timing.append(
                TimingStats(
                    estimator=estimator,
                    n_quads=n_quads,
                    fits=len(walls),
                    mean_ms=float(np.mean(walls)) if walls else math.nan,
                    min_ms=float(np.min(walls)) if walls else math.nan,
                    max_ms=float(np.max(walls)) if walls else math.nan,
                )
            )
            for j, truth in enumerate(design.true_params):
                a_vals = np.array([r.a_hat[j] for r in cell])
                b_vals = np.array([r.b_hat[j] for r in cell])
                out_mask = np.array(
                    [
                        is_outlier(
                            ItemParams(a=r.a_hat[j], b=r.b_hat[j]),
                            design.model,
                            r.degenerate[j],
                        )
                        for r in cell
                    ],
                    dtype=bool,
                )
                out_a = np.array(
                    [
                        r.degenerate[j]
                        or r.a_hat[j] <= A_OUTLIER_LOW
                        or r.a_hat[j] >= A_OUTLIER_HIGH
                        for r in cell
                    ],
                    dtype=bool,
                )
                out_b = np.array(
                    [r.degenerate[j] or abs(r.b_hat[j]) >= B_OUTLIER_LIMIT for r in cell],
                    dtype=bool,
                )
                kept_a = a_vals[~out_mask]
                kept_b = b_vals[~out_mask]
                rows.append(
                    StudyRow(
                        item=j + 1,
                        estimator=estimator,
                        n_quads=n_quads,
                        true_a=truth.a,
                        true_b=truth.b,
                        mean_a=float(a_vals.mean()) if len(a_vals) else math.nan,
                        mean_b=float(b_vals.mean()) if len(b_vals) else math.nan,
                        rmse_a=float(np.sqrt(np.mean((a_vals - truth.a) ** 2)))
                        if len(a_vals)
                        else math.nan,
                        rmse_b=float(np.sqrt(np.mean((b_vals - truth.b) ** 2)))
                        if len(b_vals)
                        else math.nan,
                        filtered_mean_a=float(kept_a.mean()) if len(kept_a) else math.nan,
                        filtered_mean_b=float(kept_b.mean()) if len(kept_b) else math.nan,
                        outliers_a=int(out_a.sum()),
                        outliers_b=int(out_b.sum()),
                        outliers=int(out_mask.sum()),
                        reps=len(cell),
                    )
                )

    return StudySummary(
        design=design, rows=tuple(rows), timing=tuple(timing), failures=failures
    )


def replicate_study(
    design: StudyDesign,
    estimators: Sequence[str] = ("ols",),
    workers: int | None = None,
) -> StudySummary:
    """Generate, fit, and aggregate design.reps replications.

    Per-replication seeds are spawned from the design seed, so results are
    reproducible and independent of the worker count.  Individual fit
    failures are counted, never fatal.
    """
    estimators = tuple(estimators)
    for est in estimators:
        if est not in ESTIMATORS:
            raise ValueError(f"unknown estimator {est!r}; expected one of {ESTIMATORS}")

    seeds = np.random.SeedSequence(design.seed).spawn(design.reps)
    tasks = [(rep, design, estimators, seeds[rep]) for rep in range(design.reps)]

    n_workers = resolve_workers(workers)
    records: list[_FitRecord] = []
    if n_workers == 1 or design.reps == 1:
        for task in tasks:
            records.extend(_run_replication(task))
    else:
        chunk = max(1, design.reps // (n_workers * 4))
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for result in pool.map(_run_replication, tasks, chunksize=chunk):
                records.extend(result)

    records.sort(key=lambda r: (r.rep, r.estimator, r.n_quads))
    return _aggregate(design, estimators, records)


def quad_study(
    design: StudyDesign,
    estimators: Sequence[str] = ("ols",),
    t_sweep: Sequence[int] = DEFAULT_QUAD_SWEEP,
    workers: int | None = None,
) -> StudySummary:
    """Replication study swept over a list of quadrature point counts."""
    swept = replace(design, t_list=tuple(t_sweep))
    return replicate_study(swept, estimators=estimators, workers=workers)
