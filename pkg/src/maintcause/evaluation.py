"""Evaluation against ground truth: curve error, policy metrics, sweeps.

Everything here compares estimators and policies to the generator's
retained truth on the held-out test split:

- ``mise``: mean integrated squared error between an estimator's
  dose-response curves and the true per-contract curves, integrated
  over the frequency range by the trapezoidal rule on the grid;
- ``policy_error``: mean squared difference between prescribed and
  ideal frequencies (PE);
- ``policy_cost_ratio``: mean ratio of the true cost at the prescribed
  frequency to the true cost at the ideal frequency (PCR, always >= 1,
  and exactly 1 for the oracle policy).

``run_cell`` executes one (seed, bias level) experiment end to end:
generate, fit both estimator families for both outcomes, prescribe with
every configured policy, and score. ``run_experiment`` runs the full
seed-by-bias grid, optionally across worker processes, and aggregates
mean/std/median per bias level. Cells are independent and aggregation
folds over sorted cell keys, so parallel and sequential execution
produce identical reports.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig, config_hash
from .datagen import Oracle, generate_dataset
from .domain import (
    Contract,
    CostParams,
    Dataset,
    TreatmentGrid,
    ValidationError,
    total_cost,
)
from .estimators import (
    OUTCOME_KINDS,
    OutcomeEstimator,
    fit_scigan,
    fit_supervised,
)
from .policy import (
    FAMILY_LABELS,
    Prescription,
    cost_matrix,
    individualized_from_costs,
    prescribe_oracle,
    shared_from_costs,
)

__all__ = [
    "OracleEstimator",
    "CellResult",
    "EvalReport",
    "ExperimentReport",
    "mise",
    "policy_error",
    "policy_cost_ratio",
    "fill_true_costs",
    "policy_families",
    "score_estimators",
    "fit_cell_estimators",
    "run_cell",
    "safe_cell",
    "aggregate",
    "resolve_workers",
    "run_experiment",
]

REPORT_VERSION = 1


class OracleEstimator(OutcomeEstimator):
    """Ground-truth curves behind the standard estimator interface.

    Contracts are identified by their encoded feature rows, which are
    unique with probability one under the continuous covariate sampler.
    Useful for self-consistency checks (a perfect estimator must score
    MISE 0, PE 0, PCR 1) and as the reference policy inside sweeps.
    """

    def __init__(self, oracle: Oracle, kind: str) -> None:
        if kind not in OUTCOME_KINDS:
            raise ValidationError(f"outcome kind must be one of {OUTCOME_KINDS}, got {kind!r}")
        self.oracle = oracle
        self.kind = kind
        self.estimator = "oracle"
        self.trained = True
        self.grid = oracle.grid
        self._row_ids = {
            row.tobytes(): int(cid)
            for row, cid in zip(oracle.features, oracle.ids)
        }

    def _ids(self, X: np.ndarray) -> list[int]:
        try:
            return [
                self._row_ids[np.ascontiguousarray(row).tobytes()] for row in X
            ]
        except KeyError:
            raise ValidationError(
                "feature row does not belong to this oracle's population"
            ) from None

    def predict(self, x, t):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x[None, :] if single else x
        t_arr = np.asarray(t, dtype=float)
        tt = np.full(len(X), float(t_arr)) if t_arr.ndim == 0 else t_arr
        o, f = self.oracle.outcomes_at(self._ids(X), tt)
        out = o if self.kind == "overhauls" else f
        return float(out[0]) if single else out

    def predict_curve(self, X: np.ndarray, grid: TreatmentGrid) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ids = self._ids(X)
        if self.kind == "overhauls":
            return self.oracle.overhaul_curves(ids, grid.points)
        return self.oracle.failure_curves(ids, grid.points)


def _true_curves(
    oracle: Oracle, ids: Sequence[int], kind: str, grid: TreatmentGrid
) -> np.ndarray:
    if kind == "overhauls":
        return oracle.overhaul_curves(ids, grid.points)
    return oracle.failure_curves(ids, grid.points)


def _check_span(outer: TreatmentGrid, inner: TreatmentGrid, what: str) -> None:
    if outer.t_min > inner.t_min + 1e-12 or outer.t_max < inner.t_max - 1e-12:
        raise ValidationError(
            f"grid mismatch: {what} covers [{outer.t_min}, {outer.t_max}] "
            f"but evaluation requires [{inner.t_min}, {inner.t_max}]"
        )


def _mise_from_curves(
    predicted: np.ndarray, truth: np.ndarray, grid: TreatmentGrid
) -> float:
    if predicted.shape != truth.shape:
        raise ValidationError(
            f"grid mismatch: predicted curves {predicted.shape} vs true {truth.shape}"
        )
    if not np.isfinite(predicted).all():
        raise ValidationError("predicted curves contain non-finite values")
    squared = (predicted - truth) ** 2
    return float(np.mean(np.trapezoid(squared, grid.points, axis=1)))


def mise(
    est: OutcomeEstimator,
    oracle: Oracle,
    population: Sequence[Contract],
    grid: TreatmentGrid | None = None,
) -> float:
    """Mean integrated squared error of the estimator's curves.

    Per contract, the squared difference between estimated and true
    dose-response curves is integrated over the full frequency range by
    the trapezoidal rule on the grid; the result is averaged over the
    population. The trapezoid is exact for constant integrands, so a
    perfect estimator shifted by c scores span * c**2 exactly.
    """
    population = tuple(population)
    if not population:
        raise ValidationError("population must be nonempty")
    grid = grid or oracle.grid
    _check_span(oracle.grid, grid, "the oracle grid")
    est_grid = getattr(est, "grid", None)
    if est_grid is not None:
        _check_span(est_grid, grid, "the estimator's fitted range")
    ids = [c.id for c in population]
    X = np.stack([c.features for c in population])
    truth = _true_curves(oracle, ids, est.kind, grid)
    return _mise_from_curves(est.predict_curve(X, grid), truth, grid)


def _by_id(prescriptions: Sequence[Prescription], what: str) -> dict[int, Prescription]:
    pres = tuple(prescriptions)
    if not pres:
        raise ValidationError(f"{what} must be nonempty")
    out = {p.id: p for p in pres}
    if len(out) != len(pres):
        raise ValidationError(f"duplicate contract ids in {what}")
    return out


def policy_error(
    prescriptions: Sequence[Prescription],
    oracle_prescriptions: Sequence[Prescription],
) -> float:
    """PE: mean squared difference between prescribed and ideal frequencies."""
    got = _by_id(prescriptions, "prescriptions")
    ideal = _by_id(oracle_prescriptions, "oracle prescriptions")
    if set(got) != set(ideal):
        raise ValidationError(
            "prescription ids do not match the oracle prescriptions"
        )
    ids = sorted(got)
    diffs = np.array([got[i].prescribed_t - ideal[i].prescribed_t for i in ids])
    return float(np.mean(diffs**2))


def policy_cost_ratio(
    prescriptions: Sequence[Prescription],
    oracle: Oracle,
    cp: CostParams,
    grid: TreatmentGrid | None = None,
) -> float:
    """PCR: mean of true cost at prescribed t over true cost at ideal t.

    Both costs are read from the same grid evaluation of the true cost
    curve, so the oracle policy scores exactly 1 and every other policy
    scores at least 1. Prescribed frequencies must lie on the grid.
    """
    pres = _by_id(prescriptions, "prescriptions")
    grid = grid or oracle.grid
    ids = sorted(pres)
    t_hat = np.array([pres[i].prescribed_t for i in ids])
    k_hat = grid.index_of(t_hat)
    overhauls = oracle.overhaul_curves(ids, grid.points)
    failures = oracle.failure_curves(ids, grid.points)
    costs = cost_matrix(overhauls, failures, cp, grid)
    ideal = individualized_from_costs(ids, costs, grid, "oracle")
    rows = np.arange(len(ids))
    cost_star = np.array([p.estimated_cost for p in ideal])
    if np.any(cost_star <= 0.0):
        raise ValidationError("true cost at the ideal frequency must be positive")
    return float(np.mean(costs[rows, k_hat] / cost_star))


def fill_true_costs(
    prescriptions: Sequence[Prescription],
    oracle: Oracle,
    cp: CostParams,
) -> tuple[Prescription, ...]:
    """Attach each prescription's cost on the true outcome curves."""
    pres = tuple(prescriptions)
    if not pres:
        raise ValidationError("prescriptions must be nonempty")
    ids = [p.id for p in pres]
    ts = np.array([p.prescribed_t for p in pres])
    o, f = oracle.outcomes_at(ids, ts)
    costs = np.atleast_1d(total_cost(ts, o, f, cp))
    return tuple(p.with_true_cost(float(c)) for p, c in zip(pres, costs))


@dataclass(frozen=True)
class CellResult:
    """All metrics from one (seed, bias level) experiment cell.

    ``mise`` and ``factual_mse`` are keyed "family/outcome" (for example
    "mlp/overhauls"); ``pe`` and ``pcr`` are keyed by policy name. A
    failed cell carries the error message and empty metric maps.
    """

    seed: int
    bias_level: float
    n: int
    mise: dict[str, float]
    factual_mse: dict[str, float]
    pe: dict[str, float]
    pcr: dict[str, float]
    error: str | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc: dict) -> "CellResult":
        names = [f.name for f in dataclasses.fields(cls)]
        unknown = set(doc) - set(names)
        if unknown:
            raise ValidationError(f"unknown cell result key(s): {sorted(unknown)}")
        return cls(**doc)


def policy_families(policies: Sequence[str]) -> list[str]:
    """Estimator families the given policies draw their curves from."""
    return sorted({p.rsplit("-", 1)[0] for p in policies if p != "oracle"})


def score_estimators(
    config: ExperimentConfig,
    dataset: Dataset,
    oracle: Oracle,
    estimators: dict[str, OutcomeEstimator],
) -> CellResult:
    """Score fitted estimators and the configured policies on one dataset.

    ``estimators`` maps "family/outcome" (for example "mlp/overhauls")
    to a fitted estimator; every non-oracle family referenced by
    ``config.policies`` must be covered for both outcomes. Oracle-backed
    entries are built internally. Curves over the test split are
    predicted once per estimator and reused by every metric and policy.
    """
    X_te, t_te = dataset.feature_matrix("test"), dataset.treatments("test")
    test = dataset.subset("test")
    ids = [c.id for c in test]

    families = policy_families(config.policies)
    curves: dict[str, np.ndarray] = {}
    mise_out: dict[str, float] = {}
    factual: dict[str, float] = {}
    for kind in OUTCOME_KINDS:
        y_te = dataset.outcomes(kind, "test")
        truth = _true_curves(oracle, ids, kind, config.grid)
        for family in families:
            key = f"{family}/{kind}"
            if family == "oracle":
                est = OracleEstimator(oracle, kind)
            elif key in estimators:
                est = estimators[key]
            else:
                raise ValidationError(
                    f"policies need an estimator for {key!r} but none was given"
                )
            curves[key] = est.predict_curve(X_te, config.grid)
            mise_out[key] = _mise_from_curves(curves[key], truth, config.grid)
            factual[key] = float(np.mean((est.predict(X_te, t_te) - y_te) ** 2))

    ideal = prescribe_oracle(oracle, test, config.costs, config.grid)
    pe_out: dict[str, float] = {}
    pcr_out: dict[str, float] = {}
    for policy_name in config.policies:
        if policy_name == "oracle":
            pres = ideal
        else:
            family, strategy = policy_name.rsplit("-", 1)
            costs = cost_matrix(
                curves[f"{family}/overhauls"],
                curves[f"{family}/failures"],
                config.costs,
                config.grid,
            )
            maker = individualized_from_costs if strategy == "ite" else shared_from_costs
            pres = maker(ids, costs, config.grid, policy_name)
        pe_out[policy_name] = policy_error(pres, ideal)
        pcr_out[policy_name] = policy_cost_ratio(pres, oracle, config.costs, config.grid)

    return CellResult(
        seed=dataset.metadata.seed,
        bias_level=dataset.metadata.bias_level,
        n=len(dataset),
        mise=mise_out,
        factual_mse=factual,
        pe=pe_out,
        pcr=pcr_out,
    )


def fit_cell_estimators(
    config: ExperimentConfig, dataset: Dataset, seed: int
) -> dict[str, OutcomeEstimator]:
    """Fit every estimator family the configured policies need.

    The cell seed replaces the seed in each family's training config, so
    cells are independent and reproducible in isolation.
    """
    X_tr, t_tr = dataset.feature_matrix("train"), dataset.treatments("train")
    X_va, t_va = dataset.feature_matrix("valid"), dataset.treatments("valid")
    out: dict[str, OutcomeEstimator] = {}
    for kind in OUTCOME_KINDS:
        train_data = (X_tr, t_tr, dataset.outcomes(kind, "train"))
        valid_data = (X_va, t_va, dataset.outcomes(kind, "valid"))
        for family in policy_families(config.policies):
            if family == "mlp":
                cfg = dataclasses.replace(
                    config.supervised,
                    train=dataclasses.replace(config.supervised.train, seed=seed),
                )
                est = fit_supervised(train_data, valid_data, kind, cfg, config.grid)
            elif family == "scigan":
                cfg = dataclasses.replace(
                    config.scigan,
                    train=dataclasses.replace(config.scigan.train, seed=seed),
                )
                est = fit_scigan(train_data, valid_data, kind, cfg, config.grid)
            elif family == "oracle":
                continue  # score_estimators builds oracle entries itself
            else:
                raise ValidationError(f"no estimator family for policy prefix {family!r}")
            out[f"{family}/{kind}"] = est
    return out


def run_cell(config: ExperimentConfig, seed: int, bias_level: float) -> CellResult:
    """One full experiment cell: generate, fit, prescribe, score."""
    dataset, oracle = generate_dataset(config.n, bias_level, seed, config.grid)
    estimators = fit_cell_estimators(config, dataset, seed)
    return score_estimators(config, dataset, oracle, estimators)


def safe_cell(config: ExperimentConfig, seed: int, bias_level: float) -> CellResult:
    """run_cell, but failures become a recorded error instead of aborting."""
    try:
        return run_cell(config, seed, bias_level)
    except Exception as exc:  # a failed cell must not kill the sweep
        return CellResult(
            seed=seed,
            bias_level=bias_level,
            n=config.n,
            mise={},
            factual_mse={},
            pe={},
            pcr={},
            error=f"{type(exc).__name__}: {exc}",
        )


def _stats(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=float)
    return {
        "mean": float(arr.mean()),
        "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
        "median": float(np.median(arr)),
        "count": int(arr.size),
    }


@dataclass(frozen=True)
class EvalReport:
    """Aggregated metrics for one bias level across seeds.

    Metric maps hold {"mean", "std", "median", "count"} per key; keys
    match :class:`CellResult`. ``incomplete`` lists seeds whose cell
    failed or is missing.
    """

    bias_level: float
    n: int
    seeds: tuple[int, ...]
    grid: TreatmentGrid
    mise: dict[str, dict[str, float]]
    factual_mse: dict[str, dict[str, float]]
    pe: dict[str, dict[str, float]]
    pcr: dict[str, dict[str, float]]
    incomplete: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "bias_level": self.bias_level,
            "n": self.n,
            "seeds": list(self.seeds),
            "grid": self.grid.to_dict(),
            "mise": self.mise,
            "factual_mse": self.factual_mse,
            "pe": self.pe,
            "pcr": self.pcr,
            "incomplete": list(self.incomplete),
        }


@dataclass(frozen=True)
class ExperimentReport:
    """Full sweep output: every cell plus per-bias-level aggregates."""

    config: ExperimentConfig
    cells: tuple[CellResult, ...]
    reports: tuple[EvalReport, ...]

    def report_for(self, bias_level: float) -> EvalReport:
        for report in self.reports:
            if report.bias_level == bias_level:
                return report
        raise ValidationError(f"no aggregate for bias level {bias_level}")

    def to_dict(self) -> dict:
        config_doc = self.config.to_dict()
        # the hash ignores where results are written, so the echoed config
        # must too, or equal-hash reports would not be byte-identical
        config_doc.pop("out_dir")
        return {
            "version": REPORT_VERSION,
            "config_hash": config_hash(self.config),
            "config": config_doc,
            "cells": [c.to_dict() for c in self.cells],
            "bias_levels": [r.to_dict() for r in self.reports],
        }


def _aggregate_metric(
    cells: Sequence[CellResult], field_name: str
) -> dict[str, dict[str, float]]:
    keys = sorted({k for c in cells for k in getattr(c, field_name)})
    out = {}
    for key in keys:
        values = [getattr(c, field_name)[key] for c in cells if key in getattr(c, field_name)]
        out[key] = _stats(values)
    return out


def aggregate(config: ExperimentConfig, cells: Sequence[CellResult]) -> ExperimentReport:
    """Fold cell results into per-bias-level aggregates.

    Deterministic: cells are keyed and sorted by (bias level, seed), and
    duplicates are rejected. Failed or missing cells appear in the
    ``incomplete`` list of their bias level instead of aborting.
    """
    by_key: dict[tuple[float, int], CellResult] = {}
    for cell in cells:
        key = (cell.bias_level, cell.seed)
        if key in by_key:
            raise ValidationError(f"duplicate cell for (bias={key[0]}, seed={key[1]})")
        by_key[key] = cell
    reports = []
    for bias_level in sorted(config.bias_levels):
        complete = [
            by_key[(bias_level, seed)]
            for seed in sorted(config.seeds)
            if (bias_level, seed) in by_key and by_key[(bias_level, seed)].error is None
        ]
        incomplete = tuple(
            seed
            for seed in sorted(config.seeds)
            if (bias_level, seed) not in by_key
            or by_key[(bias_level, seed)].error is not None
        )
        reports.append(
            EvalReport(
                bias_level=bias_level,
                n=config.n,
                seeds=tuple(c.seed for c in complete),
                grid=config.grid,
                mise=_aggregate_metric(complete, "mise"),
                factual_mse=_aggregate_metric(complete, "factual_mse"),
                pe=_aggregate_metric(complete, "pe"),
                pcr=_aggregate_metric(complete, "pcr"),
                incomplete=incomplete,
            )
        )
    ordered = tuple(by_key[key] for key in sorted(by_key))
    return ExperimentReport(config=config, cells=ordered, reports=tuple(reports))


def resolve_workers(n_tasks: int, max_workers: int | None = None) -> int:
    """Worker count for a sweep.

    The MAINTCAUSE_THREADS environment variable caps parallelism even
    when a count is requested explicitly; with nothing specified, the
    CPU count is used. Never exceeds the number of tasks.
    """
    if n_tasks < 1:
        raise ValidationError("need at least one task")
    env = os.environ.get("MAINTCAUSE_THREADS", "").strip()
    cap = None
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise ValidationError(
                f"MAINTCAUSE_THREADS must be an integer, got {env!r}"
            ) from None
        if cap < 1:
            raise ValidationError(f"MAINTCAUSE_THREADS must be >= 1, got {cap}")
    if max_workers is None:
        max_workers = cap if cap is not None else (os.cpu_count() or 1)
    elif max_workers < 1:
        raise ValidationError(f"max_workers must be >= 1, got {max_workers}")
    elif cap is not None:
        max_workers = min(max_workers, cap)
    return min(max_workers, n_tasks)


def run_experiment(
    config: ExperimentConfig,
    max_workers: int | None = None,
    progress: Callable[[CellResult], None] | None = None,
) -> ExperimentReport:
    """Run every (seed, bias level) cell and aggregate.

    Cells run in worker processes when more than one worker is resolved;
    results are identical to a sequential run because each cell is
    seeded independently and aggregation sorts by cell key.
    """
    keys = config.cells()
    workers = resolve_workers(len(keys), max_workers)
    results: list[CellResult] = []
    if workers == 1:
        for seed, bias_level in keys:
            cell = safe_cell(config, seed, bias_level)
            if progress is not None:
                progress(cell)
            results.append(cell)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(safe_cell, config, seed, bias_level)
                for seed, bias_level in keys
            ]
            for future in futures:
                cell = future.result()
                if progress is not None:
                    progress(cell)
                results.append(cell)
    return aggregate(config, results)
