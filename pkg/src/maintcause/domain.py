"""Core data model shared by every other module.

A maintenance contract is a tuple of machine/contract covariates, the
preventive-maintenance (PM) frequency it received (events per running
period), and the overhaul and failure counts observed over that period.
Covariates are encoded into a flat feature vector: one-hot blocks for the
two categorical fields followed by standardized numeric columns, giving a
fixed dimension ``FEATURE_DIM`` shared by all contracts in a dataset.

Everything here is an immutable value type plus pure functions; there are
no algorithms beyond validation and encoding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "ValidationError",
    "MACHINE_TYPES",
    "CONTRACT_TYPES",
    "NUMERIC_RANGES",
    "NUMERIC_FIELDS",
    "FEATURE_DIM",
    "FEATURE_NAMES",
    "PM_FREQ_MAX",
    "SPLIT_NAMES",
    "SPLIT_FRACTIONS",
    "Covariates",
    "StandardizationStats",
    "CostParams",
    "TreatmentGrid",
    "Contract",
    "DatasetMeta",
    "Dataset",
    "encode_features",
    "encode_matrix",
    "total_cost",
    "split_sizes",
]


class ValidationError(ValueError):
    """A domain value violates its declared range, schema, or invariant."""


MACHINE_TYPES: tuple[int, ...] = (1, 2, 3, 4, 5, 6, 7)
CONTRACT_TYPES: tuple[int, ...] = (1, 2)

#: Closed ranges for the numeric covariates, in feature-column order.
NUMERIC_RANGES: dict[str, tuple[float, float]] = {
    "age_at_start": (0.0, 39.0),
    "hours_at_start": (2500.0, 110000.0),
    "hours_during": (0.0, 186000.0),
    "avg_hours_per_year": (300.0, 8500.0),
    "duration_days": (180.0, 5850.0),
}
NUMERIC_FIELDS: tuple[str, ...] = tuple(NUMERIC_RANGES)

FEATURE_NAMES: tuple[str, ...] = tuple(
    [f"machine_type_{k}" for k in MACHINE_TYPES]
    + [f"contract_type_{k}" for k in CONTRACT_TYPES]
    + [f"{name}_std" for name in NUMERIC_FIELDS]
)
FEATURE_DIM: int = len(FEATURE_NAMES)

PM_FREQ_MAX: float = 20.0

SPLIT_NAMES: tuple[str, ...] = ("train", "valid", "test")
SPLIT_FRACTIONS: tuple[float, ...] = (0.5, 0.25, 0.25)


@dataclass(frozen=True)
class Covariates:
    """Raw machine and contract characteristics for one contract."""

    machine_type: int
    age_at_start: float
    hours_at_start: float
    hours_during: float
    avg_hours_per_year: float
    contract_type: int
    duration_days: float

    def __post_init__(self) -> None:
        if self.machine_type not in MACHINE_TYPES:
            raise ValidationError(
                f"machine_type={self.machine_type!r} not in {MACHINE_TYPES}"
            )
        if self.contract_type not in CONTRACT_TYPES:
            raise ValidationError(
                f"contract_type={self.contract_type!r} not in {CONTRACT_TYPES}"
            )
        for name, (lo, hi) in NUMERIC_RANGES.items():
            value = getattr(self, name)
            if not np.isfinite(value) or not (lo <= value <= hi):
                raise ValidationError(f"{name}={value!r} outside [{lo}, {hi}]")

    def numeric_values(self) -> np.ndarray:
        """Numeric fields as a float vector, in ``NUMERIC_FIELDS`` order."""
        return np.array([getattr(self, name) for name in NUMERIC_FIELDS], dtype=float)


@dataclass(frozen=True)
class StandardizationStats:
    """Per-column mean/std of the numeric covariates, fitted on training rows only.

    The same statistics must be reused verbatim when encoding validation and
    test rows; re-fitting on those splits would leak information.
    """

    means: np.ndarray
    stds: np.ndarray

    def __post_init__(self) -> None:
        means = np.asarray(self.means, dtype=float)
        stds = np.asarray(self.stds, dtype=float)
        if means.shape != (len(NUMERIC_FIELDS),) or stds.shape != means.shape:
            raise ValidationError(
                f"stats must have shape ({len(NUMERIC_FIELDS)},), "
                f"got means {means.shape}, stds {stds.shape}"
            )
        if not (np.isfinite(means).all() and np.isfinite(stds).all()):
            raise ValidationError("standardization stats must be finite")
        if np.any(stds <= 0.0):
            bad = [NUMERIC_FIELDS[i] for i in np.flatnonzero(stds <= 0.0)]
            raise ValidationError(
                f"degenerate standardization: zero variance in column(s) {bad}"
            )
        means.setflags(write=False)
        stds.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "stds", stds)

    @classmethod
    def from_training(cls, rows: Sequence[Covariates]) -> "StandardizationStats":
        """Fit means and (population) stds on the training rows."""
        if len(rows) == 0:
            raise ValidationError("cannot fit standardization on an empty split")
        values = np.stack([c.numeric_values() for c in rows])
        return cls(means=values.mean(axis=0), stds=values.std(axis=0))


def encode_features(c: Covariates, stats: StandardizationStats) -> np.ndarray:
    """Encode one covariate row into the flat feature vector.

    Layout: one-hot machine_type (7), one-hot contract_type (2), then the
    numeric fields transformed to (value - mean) / std. Both categorical
    blocks keep the full set of levels; downstream models are non-linear,
    so the collinearity of full one-hot encoding is harmless.
    """
    x = np.zeros(FEATURE_DIM)
    x[MACHINE_TYPES.index(c.machine_type)] = 1.0
    x[len(MACHINE_TYPES) + CONTRACT_TYPES.index(c.contract_type)] = 1.0
    offset = len(MACHINE_TYPES) + len(CONTRACT_TYPES)
    x[offset:] = (c.numeric_values() - stats.means) / stats.stds
    x.setflags(write=False)
    return x


def encode_matrix(
    rows: Sequence[Covariates], stats: StandardizationStats
) -> np.ndarray:
    """Encode many covariate rows into an (n, FEATURE_DIM) matrix."""
    if len(rows) == 0:
        return np.zeros((0, FEATURE_DIM))
    out = np.stack([encode_features(c, stats) for c in rows])
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CostParams:
    """Per-period economics: unit costs of PM, overhauls, and failures."""

    c_pm: float
    c_overhaul: float
    c_failure: float

    def __post_init__(self) -> None:
        for name in ("c_pm", "c_overhaul", "c_failure"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0.0:
                raise ValidationError(f"{name}={value!r} must be strictly positive")

    @classmethod
    def table1(cls) -> "CostParams":
        """Published per-event costs (rescaled currency): 73 / 207 / 104."""
        return cls(c_pm=73.0, c_overhaul=207.0, c_failure=104.0)


def total_cost(t, o, f, cp: CostParams):
    """Combined per-period cost of PM events, overhauls, and failures.

    Linear in each argument: ``c_pm * t + c_overhaul * o + c_failure * f``.
    Accepts scalars or broadcastable arrays; rejects negative inputs.
    """
    t = np.asarray(t, dtype=float)
    o = np.asarray(o, dtype=float)
    f = np.asarray(f, dtype=float)
    for name, value in (("t", t), ("o", o), ("f", f)):
        if np.any(value < 0.0):
            raise ValidationError(f"{name} must be non-negative")
    result = cp.c_pm * t + cp.c_overhaul * o + cp.c_failure * f
    return result if result.ndim else float(result)


@dataclass(frozen=True)
class TreatmentGrid:
    """Uniform evaluation grid over the PM-frequency range.

    The treatment space is continuous; the grid discretizes it for curve
    evaluation and exhaustive argmin search. Defaults to [0, 20] at step
    0.1 (201 points), fine enough that grid argmin error is negligible
    next to estimation error.
    """

    t_min: float = 0.0
    t_max: float = PM_FREQ_MAX
    step: float = 0.1
    points: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not (np.isfinite(self.t_min) and np.isfinite(self.t_max)):
            raise ValidationError("grid bounds must be finite")
        if self.t_max <= self.t_min:
            raise ValidationError("t_max must exceed t_min")
        if self.step <= 0.0:
            raise ValidationError("step must be positive")
        span = self.t_max - self.t_min
        n_steps = int(round(span / self.step))
        if n_steps < 1 or abs(n_steps * self.step - span) > 1e-9:
            raise ValidationError(
                f"step {self.step} does not evenly divide [{self.t_min}, {self.t_max}]"
            )
        points = np.linspace(self.t_min, self.t_max, n_steps + 1)
        spacing = np.diff(points)
        if np.any(np.abs(spacing - spacing[0]) > 1e-12):
            raise ValidationError("grid spacing is not uniform to 1e-12")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def default(cls) -> "TreatmentGrid":
        return cls()

    @property
    def n_points(self) -> int:
        return self.points.size

    def index_of(self, t):
        """Grid index of each value in t; rejects values off the grid.

        Membership tolerance is 1e-9 in frequency units. Accepts a scalar
        or an array and returns the matching int or int array.
        """
        t_arr = np.asarray(t, dtype=float)
        k = np.rint((t_arr - self.t_min) / self.step).astype(int)
        nearest = self.t_min + k * self.step
        ok = (k >= 0) & (k < self.n_points) & (np.abs(nearest - t_arr) <= 1e-9)
        if not np.all(ok):
            bad = np.atleast_1d(t_arr)[~np.atleast_1d(ok)]
            raise ValidationError(f"value(s) not on the grid: {bad[:5].tolist()}")
        return k if t_arr.ndim else int(k)

    def to_dict(self) -> dict:
        return {"t_min": self.t_min, "t_max": self.t_max, "step": self.step}

    @classmethod
    def from_dict(cls, doc: dict) -> "TreatmentGrid":
        return cls(t_min=doc["t_min"], t_max=doc["t_max"], step=doc["step"])


@dataclass(frozen=True)
class Contract:
    """One observed maintenance contract.

    ``pm_freq`` is the treatment actually assigned; ``overhauls`` and
    ``failures`` are the outcomes observed under it. Counterfactual
    outcomes are never stored here; only the generator's oracle knows them.
    """

    id: int
    covariates: Covariates
    features: np.ndarray
    pm_freq: float
    overhauls: float
    failures: float

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=float)
        if features.shape != (FEATURE_DIM,):
            raise ValidationError(
                f"features must have shape ({FEATURE_DIM},), got {features.shape}"
            )
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        if not (np.isfinite(self.pm_freq) and 0.0 <= self.pm_freq <= PM_FREQ_MAX):
            raise ValidationError(
                f"pm_freq={self.pm_freq!r} outside [0, {PM_FREQ_MAX}]"
            )
        for name in ("overhauls", "failures"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValidationError(f"{name}={value!r} must be finite and >= 0")


def split_sizes(n: int) -> dict[str, int]:
    """Split counts for the 50/25/25 train/valid/test convention."""
    if n < 8:
        raise ValidationError(f"need n >= 8 to populate all splits, got {n}")
    n_train = int(round(n * SPLIT_FRACTIONS[0]))
    n_valid = int(round(n * SPLIT_FRACTIONS[1]))
    return {"train": n_train, "valid": n_valid, "test": n - n_train - n_valid}


@dataclass(frozen=True)
class DatasetMeta:
    """Provenance of a generated dataset: seed, bias level, split layout."""

    seed: int
    bias_level: float
    n: int
    split_counts: dict[str, int]
    stats: StandardizationStats

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "bias_level": self.bias_level,
            "n": self.n,
            "split_counts": dict(self.split_counts),
            "split_fractions": list(SPLIT_FRACTIONS),
            "standardization": {
                "fields": list(NUMERIC_FIELDS),
                "means": [float(v) for v in self.stats.means],
                "stds": [float(v) for v in self.stats.stds],
            },
        }


@dataclass(frozen=True)
class Dataset:
    """A population of contracts plus its train/valid/test split labels."""

    contracts: tuple[Contract, ...]
    split_labels: dict[int, str]
    metadata: DatasetMeta

    def __post_init__(self) -> None:
        ids = [c.id for c in self.contracts]
        if len(set(ids)) != len(ids):
            raise ValidationError("contract ids must be unique")
        if set(self.split_labels) != set(ids):
            raise ValidationError("split_labels must cover exactly the contract ids")
        bad = {v for v in self.split_labels.values()} - set(SPLIT_NAMES)
        if bad:
            raise ValidationError(f"unknown split label(s): {sorted(bad)}")
        expected = split_sizes(len(self.contracts))
        counts = {name: 0 for name in SPLIT_NAMES}
        for label in self.split_labels.values():
            counts[label] += 1
        if counts != expected:
            raise ValidationError(
                f"split counts {counts} do not match the 50/25/25 rule {expected}"
            )

    def __len__(self) -> int:
        return len(self.contracts)

    def subset(self, split: str | None = None) -> tuple[Contract, ...]:
        if split is None:
            return self.contracts
        if split not in SPLIT_NAMES:
            raise ValidationError(f"unknown split {split!r}")
        return tuple(
            c for c in self.contracts if self.split_labels[c.id] == split
        )

    def ids(self, split: str | None = None) -> np.ndarray:
        return np.array([c.id for c in self.subset(split)], dtype=np.int64)

    def feature_matrix(self, split: str | None = None) -> np.ndarray:
        subset = self.subset(split)
        if not subset:
            return np.zeros((0, FEATURE_DIM))
        return np.stack([c.features for c in subset])

    def treatments(self, split: str | None = None) -> np.ndarray:
        return np.array([c.pm_freq for c in self.subset(split)], dtype=float)

    def outcomes(self, kind: str, split: str | None = None) -> np.ndarray:
        if kind not in ("overhauls", "failures"):
            raise ValidationError(f"unknown outcome kind {kind!r}")
        return np.array([getattr(c, kind) for c in self.subset(split)], dtype=float)
