"""Semi-synthetic contract populations with controllable selection bias.

Covariates are sampled uniformly over their published ranges (the real
population is confidential, so uniform is the least-assumption choice).
Potential outcomes follow logistic dose-response curves in the PM
frequency t:

    overhauls(t) = 7 * sigmoid(v_o.x - 0.1 * sigmoid(w_o.x) * t + eps_o)
    failures(t)  = 9 * sigmoid(v_f.x - 0.1 * sigmoid(w_f.x) * t + eps_f)

with weight vectors drawn uniformly on (0, 1)^d per experiment seed and a
per-contract noise term shared across all t, so each contract's curve is
smooth and strictly decreasing in t.

Observed PM frequencies are drawn from a scaled beta distribution whose
shape depends on the contract through a propensity score delta:

    t ~ 20 * Beta(1 + lam * delta / 10, 1 + lam * delta)

where delta is a logistic function of the linear index w_b.x,
standardized over the training split and shifted low (see
``PROPENSITY_OFFSET``). ``lam`` controls selection bias: lam = 0 gives
Beta(1, 1), i.e. uniform random assignment; raising lam concentrates
maintenance away from high-delta contracts, mimicking a historical
policy, and keeps widening the gap between the treatment distributions
of high and low propensity contracts. Treatment depends on the features
only through delta, so assignment is unconfounded given x, and for any
finite lam the beta density is positive on the whole open range,
preserving overlap.

All randomness is derived from counter-based (Philox) streams keyed by
(seed, stream, contract index), so contracts can be generated in parallel
with results identical to sequential generation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import kstest, wasserstein_distance

from .domain import (
    CONTRACT_TYPES,
    FEATURE_DIM,
    MACHINE_TYPES,
    NUMERIC_RANGES,
    PM_FREQ_MAX,
    SPLIT_NAMES,
    Contract,
    Covariates,
    Dataset,
    DatasetMeta,
    StandardizationStats,
    TreatmentGrid,
    ValidationError,
    encode_matrix,
    split_sizes,
)

__all__ = [
    "PROPENSITY_OFFSET",
    "TrueOutcomeModel",
    "BiasModel",
    "Oracle",
    "sample_covariates",
    "true_overhauls",
    "true_failures",
    "assign_treatment",
    "assign_treatments",
    "generate_dataset",
    "scaled_beta_mean",
    "ks_uniform_statistic",
    "delta_quartile_wasserstein",
    "bias_diagnostics",
]

OVERHAUL_SCALE = 7.0
FAILURE_SCALE = 9.0
PM_EFFECT_SLOPE = 0.1

# Shift applied to the standardized propensity index before the logistic.
# Keeps delta small, so lam * delta stays in the regime where the two beta
# shape parameters still diverge as lam grows; without the shift the per-
# contract assignment laws all collapse onto the same low-frequency beta
# at high bias levels and the bias ordering over lam would not be monotone.
PROPENSITY_OFFSET = -3.0

# Stream tags for counter-based RNG derivation; persisted implicitly through
# the seed, so renumbering would silently change every generated dataset.
_STREAM_COVARIATES = 1
_STREAM_MODEL = 2
_STREAM_NOISE = 3
_STREAM_TREATMENT = 4

_MAX_SEED = 2**63 - 1


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, stream, contract index)."""
    if not (0 <= seed <= _MAX_SEED):
        raise ValidationError(f"seed must be in [0, 2**63), got {seed}")
    key = np.array([seed, (stream << 48) | index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class TrueOutcomeModel:
    """Hidden ground-truth dose-response parameters for one experiment seed.

    ``v_*`` set each contract's base event rate, ``w_*`` its PM
    effectiveness; both are uniform on (0, 1) per coordinate. The logistic
    squashing plus the scales 7 and 9 bound overhauls to (0, 7) and
    failures to (0, 9), and sigmoid(w.x) > 0 makes every curve strictly
    decreasing in t.
    """

    v_o: np.ndarray
    w_o: np.ndarray
    v_f: np.ndarray
    w_f: np.ndarray
    scale_overhauls: float = OVERHAUL_SCALE
    scale_failures: float = FAILURE_SCALE
    pm_effect_slope: float = PM_EFFECT_SLOPE

    def __post_init__(self) -> None:
        for name in ("v_o", "w_o", "v_f", "w_f"):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.ndim != 1 or not np.isfinite(w).all():
                raise ValidationError(f"{name} must be a finite 1-d weight vector")
            w.setflags(write=False)
            object.__setattr__(self, name, w)

    @classmethod
    def from_seed(cls, seed: int, d: int = FEATURE_DIM) -> "TrueOutcomeModel":
        rng = _rng(seed, _STREAM_MODEL)
        return cls(
            v_o=rng.uniform(0.0, 1.0, d),
            w_o=rng.uniform(0.0, 1.0, d),
            v_f=rng.uniform(0.0, 1.0, d),
            w_f=rng.uniform(0.0, 1.0, d),
        )


def _dose_response(
    scale: float, v: np.ndarray, w: np.ndarray, slope: float, x, eps, t
):
    """Evaluate scale * sigmoid(v.x - slope * sigmoid(w.x) * t + eps).

    Broadcasts over contracts and treatments: with x of shape (n, d), eps of
    shape (n,) and t of shape (m,), returns an (n, m) curve matrix; scalar
    and per-contract t are supported as well.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    eps_arr = np.atleast_1d(np.asarray(eps, dtype=float))
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValidationError("pm frequency t must be >= 0")
    base = X @ v
    effect = slope * expit(X @ w)
    if t_arr.ndim <= 1 and t_arr.shape == base.shape:
        # one treatment per contract
        z = base - effect * t_arr + eps_arr
    else:
        z = base[:, None] - np.outer(effect, np.atleast_1d(t_arr)) + eps_arr[:, None]
    out = scale * expit(z)
    if single:
        out = out[0]
    if out.ndim == 0 or (single and np.isscalar(t)):
        return float(np.squeeze(out))
    return np.squeeze(out) if (single and out.size == 1) else out


def true_overhauls(model: TrueOutcomeModel, x, eps, t):
    """Ground-truth overhaul rate(s) at PM frequency t."""
    return _dose_response(
        model.scale_overhauls, model.v_o, model.w_o, model.pm_effect_slope, x, eps, t
    )


def true_failures(model: TrueOutcomeModel, x, eps, t):
    """Ground-truth failure rate(s) at PM frequency t."""
    return _dose_response(
        model.scale_failures, model.v_f, model.w_f, model.pm_effect_slope, x, eps, t
    )


@dataclass(frozen=True)
class BiasModel:
    """Selection-bias injector for historical PM assignment.

    ``index_center`` and ``index_scale`` standardize the linear index
    w_b.x (fitted on the training split when produced by the generator),
    so the propensity distribution is stable across populations.
    """

    w_b: np.ndarray
    bias_level: float
    index_center: float = 0.0
    index_scale: float = 1.0

    def __post_init__(self) -> None:
        w = np.asarray(self.w_b, dtype=float)
        if w.ndim != 1 or not np.isfinite(w).all():
            raise ValidationError("w_b must be a finite 1-d weight vector")
        w.setflags(write=False)
        object.__setattr__(self, "w_b", w)
        if not np.isfinite(self.bias_level) or self.bias_level < 0.0:
            raise ValidationError(f"bias level must be >= 0, got {self.bias_level}")
        if not np.isfinite(self.index_center):
            raise ValidationError("index_center must be finite")
        if not np.isfinite(self.index_scale) or self.index_scale <= 0.0:
            raise ValidationError("index_scale must be a positive float")

    @classmethod
    def from_seed(
        cls,
        seed: int,
        bias_level: float,
        d: int = FEATURE_DIM,
        index_center: float = 0.0,
        index_scale: float = 1.0,
    ) -> "BiasModel":
        # Drawn from the same model stream as the outcome weights, after them,
        # so one seed pins the whole generating process.
        rng = _rng(seed, _STREAM_MODEL)
        rng.uniform(0.0, 1.0, 4 * d)  # skip v_o, w_o, v_f, w_f
        return cls(
            w_b=rng.uniform(0.0, 1.0, d),
            bias_level=bias_level,
            index_center=index_center,
            index_scale=index_scale,
        )

    def delta(self, x) -> np.ndarray | float:
        """Assignment propensity in (0, 1): logistic in the standardized index.

        The offset keeps propensities low, which makes bias strength
        monotone in ``bias_level`` (see ``PROPENSITY_OFFSET``).
        """
        x = np.asarray(x, dtype=float)
        z = (x @ self.w_b - self.index_center) / self.index_scale
        out = expit(z + PROPENSITY_OFFSET)
        return float(out) if out.ndim == 0 else out

    def beta_params(self, delta) -> tuple[np.ndarray, np.ndarray]:
        """Shape parameters (alpha, beta) of the scaled beta assignment law."""
        delta = np.asarray(delta, dtype=float)
        return 1.0 + self.bias_level * delta / 10.0, 1.0 + self.bias_level * delta


def scaled_beta_mean(bias_level: float, delta) -> np.ndarray | float:
    """Analytic mean of the assigned PM frequency: 20 * alpha / (alpha + beta)."""
    delta = np.asarray(delta, dtype=float)
    alpha = 1.0 + bias_level * delta / 10.0
    beta = 1.0 + bias_level * delta
    out = PM_FREQ_MAX * alpha / (alpha + beta)
    return float(out) if out.ndim == 0 else out


def assign_treatment(bias: BiasModel, x, seed: int, contract_id: int = 0) -> float:
    """Draw one contract's observed PM frequency, deterministic per (seed, id)."""
    alpha, beta = bias.beta_params(bias.delta(x))
    rng = _rng(seed, _STREAM_TREATMENT, contract_id)
    return float(PM_FREQ_MAX * rng.beta(alpha, beta))


def assign_treatments(
    bias: BiasModel, X: np.ndarray, seed: int, ids: Sequence[int] | None = None
) -> np.ndarray:
    """Vectorized :func:`assign_treatment` over a feature matrix."""
    X = np.asarray(X, dtype=float)
    if ids is None:
        ids = range(X.shape[0])
    return np.array(
        [assign_treatment(bias, X[i], seed, cid) for i, cid in enumerate(ids)]
    )


def sample_covariates(n: int, seed: int) -> list[Covariates]:
    """Sample n covariate rows uniformly over the published ranges."""
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    rows = []
    for i in range(n):
        rng = _rng(seed, _STREAM_COVARIATES, i)
        rows.append(
            Covariates(
                machine_type=int(rng.integers(MACHINE_TYPES[0], MACHINE_TYPES[-1] + 1)),
                age_at_start=float(rng.uniform(*NUMERIC_RANGES["age_at_start"])),
                hours_at_start=float(rng.uniform(*NUMERIC_RANGES["hours_at_start"])),
                hours_during=float(rng.uniform(*NUMERIC_RANGES["hours_during"])),
                avg_hours_per_year=float(
                    rng.uniform(*NUMERIC_RANGES["avg_hours_per_year"])
                ),
                contract_type=int(
                    rng.integers(CONTRACT_TYPES[0], CONTRACT_TYPES[-1] + 1)
                ),
                duration_days=float(rng.uniform(*NUMERIC_RANGES["duration_days"])),
            )
        )
    return rows


@dataclass(frozen=True)
class Oracle:
    """Ground-truth curve provider retained by the generator.

    Holds the outcome model, the bias model, and every contract's noise
    draw, so it can evaluate each contract's full potential-outcome curves
    at any PM frequency. Used only for evaluation and for the oracle
    policy; estimators never see it.
    """

    model: TrueOutcomeModel
    bias: BiasModel
    ids: np.ndarray
    features: np.ndarray
    eps_o: np.ndarray
    eps_f: np.ndarray
    split_labels: dict[int, str]
    grid: TreatmentGrid
    seed: int

    def __post_init__(self) -> None:
        for name in ("ids", "features", "eps_o", "eps_f"):
            arr = np.asarray(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(
            self, "_row", {int(cid): k for k, cid in enumerate(self.ids)}
        )

    def _rows(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        try:
            return np.array([self._row[int(cid)] for cid in np.atleast_1d(ids)])
        except KeyError as exc:
            raise ValidationError(f"unknown contract id {exc.args[0]}") from None

    @property
    def test_ids(self) -> np.ndarray:
        return np.array(
            [cid for cid in self.ids if self.split_labels[int(cid)] == "test"],
            dtype=np.int64,
        )

    def split_of(self, cid: int) -> str:
        if int(cid) not in self.split_labels:
            raise ValidationError(f"unknown contract id {cid}")
        return self.split_labels[int(cid)]

    def overhaul_curves(self, ids, t=None) -> np.ndarray:
        """(len(ids), len(t)) matrix of true overhaul rates; t defaults to the grid."""
        t = self.grid.points if t is None else t
        rows = self._rows(ids)
        return np.atleast_2d(
            true_overhauls(self.model, self.features[rows], self.eps_o[rows], t)
        )

    def failure_curves(self, ids, t=None) -> np.ndarray:
        t = self.grid.points if t is None else t
        rows = self._rows(ids)
        return np.atleast_2d(
            true_failures(self.model, self.features[rows], self.eps_f[rows], t)
        )

    def outcomes_at(self, ids, t) -> tuple[np.ndarray, np.ndarray]:
        """True (overhauls, failures) for each contract at its own t (aligned arrays)."""
        rows = self._rows(ids)
        t = np.asarray(t, dtype=float)
        o = true_overhauls(self.model, self.features[rows], self.eps_o[rows], t)
        f = true_failures(self.model, self.features[rows], self.eps_f[rows], t)
        return np.atleast_1d(o), np.atleast_1d(f)


def generate_dataset(
    n: int,
    bias_level: float,
    seed: int,
    grid: TreatmentGrid | None = None,
) -> tuple[Dataset, Oracle]:
    """Generate a biased observational population plus its evaluation oracle.

    Pipeline: sample covariates, split 50/25/25 in id order (rows are
    i.i.d., so a contiguous split is already random), fit standardization
    on the training split only, draw the outcome/bias weights and the
    per-contract noise, assign treatments from the scaled beta law, and
    record each contract's observed outcomes at its assigned frequency.

    Returns the observational dataset and an :class:`Oracle` that retains
    the true functions and noise so the test split exposes full
    potential-outcome curves over the grid.
    """
    sizes = split_sizes(n)
    grid = grid or TreatmentGrid.default()
    covs = sample_covariates(n, seed)

    labels: dict[int, str] = {}
    for i in range(n):
        if i < sizes["train"]:
            labels[i] = "train"
        elif i < sizes["train"] + sizes["valid"]:
            labels[i] = "valid"
        else:
            labels[i] = "test"

    stats = StandardizationStats.from_training(
        [covs[i] for i in range(n) if labels[i] == "train"]
    )
    X = encode_matrix(covs, stats)

    model = TrueOutcomeModel.from_seed(seed)
    bias = BiasModel.from_seed(seed, bias_level)
    train_index = X[: sizes["train"]] @ bias.w_b
    bias = BiasModel(
        w_b=bias.w_b,
        bias_level=bias_level,
        index_center=float(train_index.mean()),
        index_scale=float(train_index.std()),
    )

    eps = np.empty((n, 2))
    for i in range(n):
        eps[i] = _rng(seed, _STREAM_NOISE, i).standard_normal(2)
    eps_o, eps_f = eps[:, 0].copy(), eps[:, 1].copy()

    treatments = assign_treatments(bias, X, seed, ids=range(n))
    overhauls = true_overhauls(model, X, eps_o, treatments)
    failures = true_failures(model, X, eps_f, treatments)

    contracts = tuple(
        Contract(
            id=i,
            covariates=covs[i],
            features=X[i],
            pm_freq=float(treatments[i]),
            overhauls=float(overhauls[i]),
            failures=float(failures[i]),
        )
        for i in range(n)
    )
    meta = DatasetMeta(
        seed=seed, bias_level=bias_level, n=n, split_counts=sizes, stats=stats
    )
    dataset = Dataset(contracts=contracts, split_labels=labels, metadata=meta)
    oracle = Oracle(
        model=model,
        bias=bias,
        ids=np.arange(n, dtype=np.int64),
        features=X,
        eps_o=eps_o,
        eps_f=eps_f,
        split_labels=labels,
        grid=grid,
        seed=seed,
    )
    return dataset, oracle


# --- diagnostics -----------------------------------------------------------
#
# The identification assumptions (consistency, overlap, unconfoundedness)
# hold by construction here: observed outcomes are read off the true curves,
# the beta assignment density is positive on (0, 20) for any finite bias
# level, and treatment depends on x only through delta. The helpers below
# quantify how strongly a generated dataset is biased; they are reporting
# tools, not runtime guards.


def ks_uniform_statistic(treatments: np.ndarray) -> float:
    """KS statistic of assigned PM frequencies against uniform[0, 20]."""
    return float(kstest(np.asarray(treatments), "uniform", args=(0.0, PM_FREQ_MAX)).statistic)


def delta_quartile_wasserstein(deltas: np.ndarray, treatments: np.ndarray) -> float:
    """Wasserstein distance between treatments of the top and bottom delta quartile.

    Grows with the bias level: at lam = 0 every contract shares one
    assignment law and the distance is sampling noise; under strong bias
    the high-delta quartile is maintained far more often.
    """
    deltas = np.asarray(deltas, dtype=float)
    treatments = np.asarray(treatments, dtype=float)
    lo, hi = np.quantile(deltas, [0.25, 0.75])
    bottom = treatments[deltas <= lo]
    top = treatments[deltas >= hi]
    return float(wasserstein_distance(top, bottom))


def bias_diagnostics(dataset: Dataset, oracle: Oracle) -> dict:
    """Summary of how selection bias shows up in a generated dataset."""
    t = dataset.treatments()
    deltas = oracle.bias.delta(dataset.feature_matrix())
    return {
        "bias_level": dataset.metadata.bias_level,
        "ks_vs_uniform": ks_uniform_statistic(t),
        "delta_quartile_wasserstein": delta_quartile_wasserstein(deltas, t),
        "treatment_mean": float(np.mean(t)),
        "treatment_range": [float(np.min(t)), float(np.max(t))],
    }
