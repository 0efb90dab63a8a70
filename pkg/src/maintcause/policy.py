"""Cost-minimizing PM-frequency prescriptions.

The expected total cost of running one contract at PM frequency t
combines the three cost drivers through a pair of outcome estimators:

    cost(t) = c_pm * t + c_overhaul * o(x, t) + c_failure * f(x, t)

Policies differ only in which curve they minimize:

- individualized (``prescribe_ite``): each contract receives the argmin
  of its own estimated cost curve;
- average (``prescribe_ate``): one shared frequency minimizing the
  population-mean cost curve, assigned to every contract;
- oracle (``prescribe_oracle``): per-contract argmin of the true cost
  curve, defining the ideal frequency that evaluation compares against.

Minimization is an exhaustive scan of the treatment grid. Estimated
curves are cheap to evaluate and possibly non-convex, so grid search is
exact on the grid and reproducible. When several grid points tie within
a small cost tolerance, the smallest frequency wins: less intervention
at equal cost.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .datagen import Oracle
from .domain import (
    PM_FREQ_MAX,
    Contract,
    CostParams,
    TreatmentGrid,
    ValidationError,
)
from .estimators import OutcomeEstimator

__all__ = [
    "TIE_TOLERANCE",
    "POLICY_NAMES",
    "FAMILY_LABELS",
    "CostCurve",
    "Prescription",
    "cost_curve",
    "cost_matrix",
    "individualized_from_costs",
    "shared_from_costs",
    "prescribe_ite",
    "prescribe_ate",
    "prescribe_oracle",
]

#: Cost ties within this tolerance resolve toward the smallest frequency.
TIE_TOLERANCE = 1e-9

POLICY_NAMES = (
    "mlp-ite",
    "mlp-ate",
    "scigan-ite",
    "scigan-ate",
    "oracle-ite",
    "oracle-ate",
    "oracle",
)

#: Estimator name -> the label used in policy names and report rows.
FAMILY_LABELS = {"supervised": "mlp", "scigan": "scigan", "oracle": "oracle"}


@dataclass(frozen=True)
class CostCurve:
    """Expected total cost at every grid frequency, with its minimizer.

    The argmin fields are computed at construction, so they are always
    consistent with the cost array and with the tie-break rule.
    """

    grid: TreatmentGrid
    costs: np.ndarray
    argmin_index: int = field(init=False)
    argmin_t: float = field(init=False)
    argmin_cost: float = field(init=False)

    def __post_init__(self) -> None:
        costs = np.asarray(self.costs, dtype=float)
        if costs.shape != (self.grid.n_points,):
            raise ValidationError(
                f"costs must align with the grid: expected shape "
                f"({self.grid.n_points},), got {costs.shape}"
            )
        if not np.isfinite(costs).all():
            raise ValidationError("cost curve contains non-finite values")
        costs.setflags(write=False)
        object.__setattr__(self, "costs", costs)
        k = int(np.argmax(costs <= costs.min() + TIE_TOLERANCE))
        object.__setattr__(self, "argmin_index", k)
        object.__setattr__(self, "argmin_t", float(self.grid.points[k]))
        object.__setattr__(self, "argmin_cost", float(costs[k]))


@dataclass(frozen=True)
class Prescription:
    """One contract's prescribed PM frequency under a named policy.

    ``estimated_cost`` is the cost the policy believed it was paying at
    the prescribed frequency; ``true_cost`` is what the frequency
    actually costs on the ground-truth curves and is filled in by
    evaluation.
    """

    id: int
    policy: str
    prescribed_t: float
    estimated_cost: float
    true_cost: float | None = None

    def __post_init__(self) -> None:
        if self.policy not in POLICY_NAMES:
            raise ValidationError(
                f"policy must be one of {POLICY_NAMES}, got {self.policy!r}"
            )
        if not (np.isfinite(self.prescribed_t) and 0.0 <= self.prescribed_t <= PM_FREQ_MAX):
            raise ValidationError(
                f"prescribed_t={self.prescribed_t!r} outside [0, {PM_FREQ_MAX}]"
            )
        if not np.isfinite(self.estimated_cost):
            raise ValidationError("estimated_cost must be finite")
        if self.true_cost is not None and not np.isfinite(self.true_cost):
            raise ValidationError("true_cost must be finite when set")

    def with_true_cost(self, value: float) -> "Prescription":
        return replace(self, true_cost=float(value))


def _check_estimators(eo: OutcomeEstimator, ef: OutcomeEstimator) -> None:
    for role, e, kind in (("overhaul", eo, "overhauls"), ("failure", ef, "failures")):
        if not getattr(e, "trained", False):
            raise ValidationError(f"{role} estimator is not trained")
        if getattr(e, "kind", None) != kind:
            raise ValidationError(
                f"{role} estimator must predict {kind!r}, "
                f"got kind={getattr(e, 'kind', None)!r}"
            )


def _policy_family(eo: OutcomeEstimator, ef: OutcomeEstimator) -> str:
    labels = []
    for role, e in (("overhaul", eo), ("failure", ef)):
        label = FAMILY_LABELS.get(getattr(e, "estimator", None))
        if label is None:
            raise ValidationError(
                f"{role} estimator has no recognized family "
                f"({getattr(e, 'estimator', None)!r}); cannot name the policy"
            )
        labels.append(label)
    if labels[0] != labels[1]:
        raise ValidationError(
            f"estimators come from different families: {labels[0]} vs {labels[1]}"
        )
    return labels[0]


def _resolve_grid(
    eo: OutcomeEstimator, ef: OutcomeEstimator, grid: TreatmentGrid | None
) -> TreatmentGrid:
    go = getattr(eo, "grid", None)
    gf = getattr(ef, "grid", None)
    if go is not None and gf is not None and (go.t_min, go.t_max) != (gf.t_min, gf.t_max):
        raise ValidationError(
            "estimators were fitted over different frequency ranges: "
            f"[{go.t_min}, {go.t_max}] vs [{gf.t_min}, {gf.t_max}]"
        )
    return grid or go or TreatmentGrid.default()


def _predicted_curves(
    eo: OutcomeEstimator, ef: OutcomeEstimator, X: np.ndarray, grid: TreatmentGrid
) -> tuple[np.ndarray, np.ndarray]:
    curves = []
    for role, e in (("overhaul", eo), ("failure", ef)):
        c = e.predict_curve(X, grid)
        if not np.isfinite(c).all():
            raise ValidationError(f"{role} estimator produced non-finite predictions")
        curves.append(c)
    return curves[0], curves[1]


def cost_matrix(
    overhauls: np.ndarray, failures: np.ndarray, cp: CostParams, grid: TreatmentGrid
) -> np.ndarray:
    """(n, grid) total-cost matrix from per-contract outcome curve matrices."""
    return (
        cp.c_pm * grid.points[None, :]
        + cp.c_overhaul * np.atleast_2d(overhauls)
        + cp.c_failure * np.atleast_2d(failures)
    )


def _first_min_indices(costs: np.ndarray) -> np.ndarray:
    """Per row, the first grid index within TIE_TOLERANCE of the row minimum."""
    mins = costs.min(axis=1, keepdims=True)
    return np.argmax(costs <= mins + TIE_TOLERANCE, axis=1)


def individualized_from_costs(
    ids: Sequence[int], costs: np.ndarray, grid: TreatmentGrid, policy: str
) -> tuple[Prescription, ...]:
    """Per-contract argmin prescriptions from a precomputed cost matrix."""
    idx = _first_min_indices(costs)
    return tuple(
        Prescription(
            id=int(cid),
            policy=policy,
            prescribed_t=float(grid.points[k]),
            estimated_cost=float(costs[i, k]),
        )
        for i, (cid, k) in enumerate(zip(ids, idx))
    )


def shared_from_costs(
    ids: Sequence[int], costs: np.ndarray, grid: TreatmentGrid, policy: str
) -> tuple[Prescription, ...]:
    """One shared argmin of the mean cost curve, from a precomputed matrix."""
    mean_curve = costs.mean(axis=0)
    k = int(np.argmax(mean_curve <= mean_curve.min() + TIE_TOLERANCE))
    t_star = float(grid.points[k])
    return tuple(
        Prescription(
            id=int(cid),
            policy=policy,
            prescribed_t=t_star,
            estimated_cost=float(costs[i, k]),
        )
        for i, cid in enumerate(ids)
    )


def _materialize(population: Sequence[Contract]) -> tuple[Contract, ...]:
    population = tuple(population)
    if not population:
        raise ValidationError("population must be nonempty")
    return population


def cost_curve(
    eo: OutcomeEstimator,
    ef: OutcomeEstimator,
    x: np.ndarray,
    cp: CostParams,
    grid: TreatmentGrid | None = None,
) -> CostCurve:
    """Expected total-cost curve for one contract's feature vector.

    costs[k] = c_pm * grid[k] + c_overhaul * eo.predict(x, grid[k])
             + c_failure * ef.predict(x, grid[k]).
    """
    _check_estimators(eo, ef)
    grid = _resolve_grid(eo, ef, grid)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError(f"x must be a single feature vector, got shape {x.shape}")
    overhauls, failures = _predicted_curves(eo, ef, x[None, :], grid)
    return CostCurve(grid=grid, costs=cost_matrix(overhauls, failures, cp, grid)[0])


def prescribe_ite(
    eo: OutcomeEstimator,
    ef: OutcomeEstimator,
    population: Sequence[Contract],
    cp: CostParams,
    grid: TreatmentGrid | None = None,
) -> tuple[Prescription, ...]:
    """Individualized policy: per-contract argmin of its own estimated curve."""
    _check_estimators(eo, ef)
    grid = _resolve_grid(eo, ef, grid)
    population = _materialize(population)
    policy = f"{_policy_family(eo, ef)}-ite"
    X = np.stack([c.features for c in population])
    overhauls, failures = _predicted_curves(eo, ef, X, grid)
    costs = cost_matrix(overhauls, failures, cp, grid)
    return individualized_from_costs([c.id for c in population], costs, grid, policy)


def prescribe_ate(
    eo: OutcomeEstimator,
    ef: OutcomeEstimator,
    population: Sequence[Contract],
    cp: CostParams,
    grid: TreatmentGrid | None = None,
) -> tuple[Prescription, ...]:
    """Average policy: one shared frequency for the whole population.

    The shared frequency minimizes the population-mean cost curve. Each
    prescription still records that contract's own estimated cost at the
    shared frequency.
    """
    _check_estimators(eo, ef)
    grid = _resolve_grid(eo, ef, grid)
    population = _materialize(population)
    policy = f"{_policy_family(eo, ef)}-ate"
    X = np.stack([c.features for c in population])
    overhauls, failures = _predicted_curves(eo, ef, X, grid)
    costs = cost_matrix(overhauls, failures, cp, grid)
    return shared_from_costs([c.id for c in population], costs, grid, policy)


def prescribe_oracle(
    oracle: Oracle,
    population: Sequence[Contract],
    cp: CostParams,
    grid: TreatmentGrid | None = None,
) -> tuple[Prescription, ...]:
    """Ground-truth policy: argmin of each contract's true cost curve.

    Defines the ideal frequency that policy metrics compare against.
    Restricted to the held-out test split; the oracle refuses to leak
    true curves for contracts the estimators trained on.
    """
    population = _materialize(population)
    grid = grid or oracle.grid
    ids = [c.id for c in population]
    non_test = [cid for cid in ids if oracle.split_of(cid) != "test"]
    if non_test:
        raise ValidationError(
            "oracle prescriptions are restricted to the test split; "
            f"got non-test contract id(s) {non_test[:5]}"
        )
    overhauls = oracle.overhaul_curves(ids, grid.points)
    failures = oracle.failure_curves(ids, grid.points)
    costs = cost_matrix(overhauls, failures, cp, grid)
    return individualized_from_costs(ids, costs, grid, "oracle")
