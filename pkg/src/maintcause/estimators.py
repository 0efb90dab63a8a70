"""Potential-outcome estimators over continuous PM frequency.

Two ways to learn g(x, t) = E[outcome at frequency t | features x] from
observational contracts, plus an average-effect wrapper:

``fit_supervised``
    Plain MLP regression on (x, t) -> y. Makes no attempt to correct for
    treatment-selection bias; its error grows with the bias level, which
    is exactly what makes it the reference baseline.

``fit_scigan``
    Counterfactual GAN. Phase 1 trains a generator to invent outcomes at
    random frequencies sampled uniformly over the whole range (this
    uniform resampling is the de-biasing lever) such that a discriminator
    cannot tell which of a set of frequency-outcome pairs was actually
    observed. Minibatches resample contracts inversely to how often their
    observed frequency occurs, so the discriminator sees real pairs at a
    roughly frequency-balanced rate even under strong selection bias.
    Phase 2 augments the training contracts with generated pairs and fits
    an inference network on the union by plain MSE. Adversarial training
    on tabular data is equilibrium-sensitive, so both phases ensemble:
    several independently initialized generators vote (pointwise median)
    on each augmented target, and several inference fits are averaged at
    prediction time.

Estimators work in a scaled space internally: frequencies divided by the
range maximum, outcomes divided by a per-estimator scale derived from the
training split. Public predictions are always in original units.

Both outcome kinds (overhauls, failures) get separately trained models;
fitting one never reads the other outcome.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import PM_FREQ_MAX, TreatmentGrid, ValidationError
from .nncore import (
    DivergenceError,
    Mlp,
    TrainConfig,
    backprop,
    grad,
    loss_value,
    make_optimizer,
    train,
)

__all__ = [
    "OUTCOME_KINDS",
    "ESTIMATOR_NAMES",
    "OutcomeEstimator",
    "MlpOutcomeEstimator",
    "EnsembleOutcomeEstimator",
    "SupervisedConfig",
    "SciganConfig",
    "SciganComponents",
    "SearchSpace",
    "fit_supervised",
    "fit_scigan",
    "search_supervised",
    "average_effect_estimator",
    "estimator_from_doc",
]

OUTCOME_KINDS = ("overhauls", "failures")
ESTIMATOR_NAMES = ("supervised", "scigan")

ENVELOPE_VERSION = 1

# GAN health check: if the discriminator's cross-entropy stays below this
# fraction of ln(D) for DIVERGENCE_WINDOW consecutive epochs, it separates
# generated from factual pairs almost perfectly and the generator has lost.
DIVERGENCE_FRACTION = 0.1
DIVERGENCE_WINDOW = 10

_ROLE_SUPERVISED = 0
_ROLE_GENERATOR = 1
_ROLE_DISCRIMINATOR = 2
_ROLE_INFERENCE = 3

_STREAM_GAN = 41
_STREAM_AUGMENT = 42


def _derived_seed(seed: int, kind: str, role: int) -> int:
    """Distinct deterministic seed per (experiment seed, outcome kind, role)."""
    return seed * 16 + role + 8 * (kind == "failures")


def _stream_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _check_kind(kind: str) -> None:
    if kind not in OUTCOME_KINDS:
        raise ValidationError(f"outcome kind must be one of {OUTCOME_KINDS}, got {kind!r}")


def _check_arrays(name: str, data: tuple) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    X, t, y = data
    X = np.asarray(X, dtype=float)
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise ValidationError(f"{name} features must be a nonempty (n, d) matrix")
    if t.shape != (len(X),) or y.shape != (len(X),):
        raise ValidationError(f"{name} treatments/outcomes must be aligned (n,) arrays")
    if not (np.isfinite(X).all() and np.isfinite(t).all() and np.isfinite(y).all()):
        raise ValidationError(f"{name} arrays must be finite")
    return X, t, y


class OutcomeEstimator:
    """Interface: a trained map (features, PM frequency) -> expected outcome."""

    kind: str
    trained: bool = False

    def predict(self, x, t):
        raise NotImplementedError

    def predict_curve(self, X: np.ndarray, grid: TreatmentGrid) -> np.ndarray:
        """(n, len(grid)) matrix of predictions for each row at each grid point."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((len(X), grid.n_points))
        for j, t in enumerate(grid.points):
            out[:, j] = self.predict(X, float(t))
        return out


@dataclass(frozen=True)
class SupervisedConfig:
    """Architecture and training budget for the supervised baseline."""

    hidden: tuple[int, ...] = (64, 64)
    train: TrainConfig = TrainConfig()

    def __post_init__(self) -> None:
        if len(self.hidden) < 1 or any(int(h) < 1 for h in self.hidden):
            raise ValidationError(f"hidden widths must be positive, got {self.hidden}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    def to_dict(self) -> dict:
        return {"hidden": list(self.hidden), "train": dataclasses.asdict(self.train)}


@dataclass(frozen=True)
class SciganConfig:
    """Counterfactual-GAN settings.

    ``dosage_set_size`` is the number of frequency-outcome pairs shown to
    the discriminator per contract (one factual, the rest generated).
    ``recon_weight`` scales the generator's factual-reconstruction
    penalty. ``density_bins`` controls the inverse-density contract
    resampling of GAN minibatches (bins over the frequency range; at zero
    bias it reduces to a plain bootstrap). ``generator_count`` GANs are
    trained from independent initializations; each augmented target is
    the median across generators of a ``z_draws``-sample noise average,
    which suppresses the occasional bad adversarial equilibrium that no
    loss trace reveals. ``augmentation_per_contract`` counts generated
    pairs added per training contract in phase 2; one pair per contract
    avoids the inference net memorizing contract-specific noise.
    ``inference_count`` inference fits (differing only in initialization
    and batch order) are averaged at prediction time. The GAN phase
    defaults to adam, which tolerates the nonstationary adversarial
    objective better than plain momentum; the phase-2 inference fit uses
    ``train`` as is.
    """

    dosage_set_size: int = 6
    noise_dim: int = 10
    recon_weight: float = 1.0
    augmentation_per_contract: int = 1
    generator_count: int = 7
    z_draws: int = 3
    inference_count: int = 5
    density_bins: int = 10
    gen_hidden: tuple[int, ...] = (64, 64)
    disc_hidden: tuple[int, ...] = (64, 64)
    inference_hidden: tuple[int, ...] = (32, 32)
    gan_epochs: int = 160
    gan_batch_size: int = 64
    gan_learning_rate: float = 5e-4
    gan_optimizer: str = "adam"
    train: TrainConfig = TrainConfig(
        learning_rate=3e-4, batch_size=256, epochs=400, patience=40, optimizer="adam"
    )

    def __post_init__(self) -> None:
        if self.dosage_set_size < 2:
            raise ValidationError("dosage_set_size must be >= 2")
        if self.noise_dim < 1:
            raise ValidationError("noise_dim must be >= 1")
        if self.recon_weight < 0.0:
            raise ValidationError("recon_weight must be >= 0")
        if self.augmentation_per_contract < 1:
            raise ValidationError("augmentation_per_contract must be >= 1")
        if self.generator_count < 1:
            raise ValidationError("generator_count must be >= 1")
        if self.z_draws < 1:
            raise ValidationError("z_draws must be >= 1")
        if self.inference_count < 1:
            raise ValidationError("inference_count must be >= 1")
        if self.density_bins < 1:
            raise ValidationError("density_bins must be >= 1")
        if self.gan_epochs < 1 or self.gan_batch_size < 1:
            raise ValidationError("gan_epochs and gan_batch_size must be >= 1")
        if self.gan_learning_rate <= 0.0:
            raise ValidationError("gan_learning_rate must be > 0")
        for name in ("gen_hidden", "disc_hidden", "inference_hidden"):
            hidden = tuple(int(h) for h in getattr(self, name))
            if len(hidden) < 1 or any(h < 1 for h in hidden):
                raise ValidationError(f"{name} widths must be positive")
            object.__setattr__(self, name, hidden)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["train"] = dataclasses.asdict(self.train)
        for name in ("gen_hidden", "disc_hidden", "inference_hidden"):
            doc[name] = list(doc[name])
        return doc


# Sigmoid outputs need headroom above the largest observed outcome, or the
# scale itself would clip true curves that peak above any factual sample.
_Y_HEADROOM = 1.1


def _y_scale(y_train: np.ndarray) -> float:
    return float(max(np.max(y_train), 1e-9) * _Y_HEADROOM)


def _prediction_inputs(x, t) -> tuple[np.ndarray, bool]:
    """Validate and assemble the scaled (features, frequency) input block."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or not np.isfinite(t_arr).all():
        raise ValidationError("pm frequency must be finite and >= 0")
    if t_arr.ndim == 0:
        tt = np.full(len(X), float(t_arr))
    elif t_arr.shape == (len(X),):
        tt = t_arr
    else:
        raise ValidationError(
            f"t must be scalar or shape ({len(X)},), got {t_arr.shape}"
        )
    return np.column_stack([X, tt / PM_FREQ_MAX]), single


class _TrainedEstimator(OutcomeEstimator):
    """Shared metadata and envelope plumbing for network-backed estimators."""

    def __init__(
        self, estimator: str, kind: str, y_scale: float, grid: TreatmentGrid, config: dict
    ) -> None:
        if estimator not in ESTIMATOR_NAMES:
            raise ValidationError(
                f"estimator must be one of {ESTIMATOR_NAMES}, got {estimator!r}"
            )
        _check_kind(kind)
        if not (np.isfinite(y_scale) and y_scale > 0.0):
            raise ValidationError(f"y_scale must be > 0, got {y_scale}")
        self.estimator = estimator
        self.kind = kind
        self.y_scale = y_scale
        self.grid = grid
        self.config = config
        self.trained = True
        self.history = None
        self.components: SciganComponents | None = None

    def _doc_header(self) -> dict:
        return {
            "version": ENVELOPE_VERSION,
            "kind": "outcome_estimator",
            "estimator": self.estimator,
            "outcome": self.kind,
            "y_scale": self.y_scale,
            "grid": self.grid.to_dict(),
            "config": self.config,
        }

    @staticmethod
    def _check_doc(doc: dict) -> None:
        if doc.get("version") != ENVELOPE_VERSION:
            raise ValidationError(f"unsupported estimator version {doc.get('version')!r}")
        if doc.get("kind") != "outcome_estimator":
            raise ValidationError(f"not an estimator envelope: {doc.get('kind')!r}")


class MlpOutcomeEstimator(_TrainedEstimator):
    """Trained network plus the scaling that maps it back to outcome units."""

    def __init__(
        self,
        estimator: str,
        kind: str,
        net: Mlp,
        y_scale: float,
        grid: TreatmentGrid,
        config: dict,
    ) -> None:
        super().__init__(estimator, kind, y_scale, grid, config)
        self.net = net

    def predict(self, x, t):
        """Expected outcome at PM frequency t; broadcasts over rows.

        Accepts a single feature vector or an (n, d) matrix; ``t`` may be
        a scalar (shared) or an aligned (n,) array.
        """
        inp, single = _prediction_inputs(x, t)
        out = self.net.forward(inp)[:, 0] * self.y_scale
        return float(out[0]) if single else out

    def to_doc(self) -> dict:
        """Persistable envelope: network checkpoint plus estimator metadata."""
        return {**self._doc_header(), "network": self.net.to_doc()}

    @classmethod
    def from_doc(cls, doc: dict) -> "MlpOutcomeEstimator":
        cls._check_doc(doc)
        return cls(
            estimator=doc["estimator"],
            kind=doc["outcome"],
            net=Mlp.from_doc(doc["network"]),
            y_scale=doc["y_scale"],
            grid=TreatmentGrid.from_dict(doc["grid"]),
            config=doc.get("config", {}),
        )


class EnsembleOutcomeEstimator(_TrainedEstimator):
    """Mean of several trained networks sharing one outcome scaling.

    Member networks differ only in initialization and batch order;
    averaging them removes fit-to-fit jitter that a single small network
    would carry into the prescribed frequencies.
    """

    def __init__(
        self,
        estimator: str,
        kind: str,
        nets: Sequence[Mlp],
        y_scale: float,
        grid: TreatmentGrid,
        config: dict,
    ) -> None:
        super().__init__(estimator, kind, y_scale, grid, config)
        if len(nets) == 0:
            raise ValidationError("ensemble needs at least one network")
        self.nets = tuple(nets)
        self.histories: tuple | None = None

    def predict(self, x, t):
        """Ensemble-mean outcome at PM frequency t; broadcasts over rows."""
        inp, single = _prediction_inputs(x, t)
        out = np.zeros(len(inp))
        for net in self.nets:
            out += net.forward(inp)[:, 0]
        out *= self.y_scale / len(self.nets)
        return float(out[0]) if single else out

    def to_doc(self) -> dict:
        """Persistable envelope: all member checkpoints plus metadata."""
        return {**self._doc_header(), "networks": [n.to_doc() for n in self.nets]}

    @classmethod
    def from_doc(cls, doc: dict) -> "EnsembleOutcomeEstimator":
        cls._check_doc(doc)
        return cls(
            estimator=doc["estimator"],
            kind=doc["outcome"],
            nets=[Mlp.from_doc(d) for d in doc["networks"]],
            y_scale=doc["y_scale"],
            grid=TreatmentGrid.from_dict(doc["grid"]),
            config=doc.get("config", {}),
        )


def estimator_from_doc(doc: dict) -> OutcomeEstimator:
    """Revive a persisted estimator envelope, single-network or ensemble."""
    if "networks" in doc:
        return EnsembleOutcomeEstimator.from_doc(doc)
    return MlpOutcomeEstimator.from_doc(doc)


def fit_supervised(
    train_data: tuple,
    valid_data: tuple,
    kind: str,
    cfg: SupervisedConfig | None = None,
    grid: TreatmentGrid | None = None,
) -> MlpOutcomeEstimator:
    """MLP regression of the observed outcome on (features, frequency).

    Trains on factual pairs only, with early stopping on validation MSE.
    No correction for how frequencies were assigned.
    """
    _check_kind(kind)
    cfg = cfg or SupervisedConfig()
    grid = grid or TreatmentGrid.default()
    X_tr, t_tr, y_tr = _check_arrays("train", train_data)
    X_va, t_va, y_va = _check_arrays("valid", valid_data)

    scale = _y_scale(y_tr)
    inp_tr = np.column_stack([X_tr, t_tr / PM_FREQ_MAX])
    inp_va = np.column_stack([X_va, t_va / PM_FREQ_MAX])
    seed = _derived_seed(cfg.train.seed, kind, _ROLE_SUPERVISED)
    net = Mlp(
        (X_tr.shape[1] + 1, *cfg.hidden, 1), output_activation="sigmoid", seed=seed
    )
    fitted, history = train(
        net,
        (inp_tr, (y_tr / scale)[:, None]),
        (inp_va, (y_va / scale)[:, None]),
        dataclasses.replace(cfg.train, seed=seed),
    )
    est = MlpOutcomeEstimator(
        estimator="supervised",
        kind=kind,
        net=fitted,
        y_scale=scale,
        grid=grid,
        config=cfg.to_dict(),
    )
    est.history = history
    return est


@dataclass
class SciganComponents:
    """Trained pieces of a counterfactual GAN fit, kept for inspection.

    ``generator``, ``discriminator`` and ``inference`` are the first
    ensemble member (with its loss traces); the full ensembles are in
    ``generators``, ``discriminators`` and ``inference_nets``.
    """

    generator: Mlp
    discriminator: Mlp
    inference: Mlp
    disc_loss: list[float]
    gen_adv_loss: list[float]
    recon_loss: list[float]
    generators: tuple[Mlp, ...] = ()
    discriminators: tuple[Mlp, ...] = ()
    inference_nets: tuple[Mlp, ...] = ()

    def factual_reconstruction(
        self, X: np.ndarray, t: np.ndarray, y: np.ndarray, y_scale: float, seed: int = 0
    ) -> float:
        """MSE of generator outputs at the factual frequencies, original units."""
        rng = _stream_rng(seed, _STREAM_AUGMENT)
        noise_dim = self.generator.widths[0] - X.shape[1] - 3
        z = rng.standard_normal((len(X), noise_dim))
        ts = np.asarray(t, dtype=float) / PM_FREQ_MAX
        ys = np.asarray(y, dtype=float) / y_scale
        gen_in = np.column_stack([X, ts, ys, z, ts])
        out = self.generator.forward(gen_in)[:, 0] * y_scale
        return float(np.mean((out - np.asarray(y, dtype=float)) ** 2))


def _gan_phase(
    X: np.ndarray,
    ts: np.ndarray,
    ys: np.ndarray,
    kind: str,
    cfg: SciganConfig,
    seed: int,
) -> tuple[Mlp, Mlp, list[float], list[float], list[float]]:
    """Adversarial phase: returns (generator, discriminator, loss traces)."""
    n, d = X.shape
    D = cfg.dosage_set_size
    gen = Mlp(
        (d + 3 + cfg.noise_dim, *cfg.gen_hidden, 1),
        output_activation="sigmoid",
        seed=_derived_seed(seed, kind, _ROLE_GENERATOR),
    )
    disc = Mlp(
        (d + 2 * D, *cfg.disc_hidden, D),
        output_activation="linear",
        seed=_derived_seed(seed, kind, _ROLE_DISCRIMINATOR),
    )
    opt_cfg = TrainConfig(
        learning_rate=cfg.gan_learning_rate,
        batch_size=cfg.gan_batch_size,
        epochs=cfg.gan_epochs,
        patience=cfg.gan_epochs,
        seed=seed,
        optimizer=cfg.gan_optimizer,
    )
    gen_opt = make_optimizer(gen, opt_cfg)
    disc_opt = make_optimizer(disc, opt_cfg)
    rng = _stream_rng(_derived_seed(seed, kind, _ROLE_GENERATOR), _STREAM_GAN)

    # Biased assignment starves the discriminator of real pairs at rare
    # frequencies, letting the generator drift unchecked there. Resampling
    # each contract inversely to its frequency-bin count balances what the
    # discriminator sees; with uniform assignment this is a plain bootstrap.
    bins = cfg.density_bins
    bin_idx = np.minimum((ts * bins).astype(int), bins - 1)
    counts = np.bincount(bin_idx, minlength=bins)
    w = 1.0 / counts[bin_idx]
    p = w / w.sum()

    base = np.column_stack([X, ts, ys])
    y_col = d + 1 + 2 * np.arange(D)
    disc_trace: list[float] = []
    gen_trace: list[float] = []
    recon_trace: list[float] = []
    low_threshold = DIVERGENCE_FRACTION * np.log(D)
    low_streak = 0

    for epoch in range(cfg.gan_epochs):
        order = rng.choice(n, size=n, replace=True, p=p)
        d_losses, g_losses, r_losses = [], [], []
        for start in range(0, n, cfg.gan_batch_size):
            rows = order[start : start + cfg.gan_batch_size]
            b = len(rows)
            dos_cf = rng.uniform(0.0, 1.0, (b, D - 1))
            pos = rng.integers(0, D, b)
            z = rng.standard_normal((b, cfg.noise_dim))

            rep = np.repeat(base[rows], D - 1, axis=0)
            z_rep = np.repeat(z, D - 1, axis=0)
            gen_in_cf = np.column_stack([rep, z_rep, dos_cf.reshape(-1, 1)])
            y_cf = gen.forward(gen_in_cf)[:, 0].reshape(b, D - 1)

            mask = np.ones((b, D), dtype=bool)
            mask[np.arange(b), pos] = False
            dosage_mat = np.empty((b, D))
            dosage_mat[mask] = dos_cf.ravel()
            dosage_mat[np.arange(b), pos] = ts[rows]
            y_mat = np.empty((b, D))
            y_mat[mask] = y_cf.ravel()
            y_mat[np.arange(b), pos] = ys[rows]
            disc_in = np.empty((b, d + 2 * D))
            disc_in[:, :d] = X[rows]
            disc_in[:, d::2] = dosage_mat
            disc_in[:, d + 1 :: 2] = y_mat

            d_losses.append(loss_value("adversarial", disc.forward(disc_in), pos))
            disc_opt.step(disc, grad(disc, disc_in, pos, "adversarial"))

            # generator step against the updated discriminator
            g_all = grad(disc, disc_in, pos, "adversarial", with_inputs=True)
            g_losses.append(loss_value("adversarial", disc.forward(disc_in), pos))
            delta_cf = -g_all.inputs[:, y_col][mask].reshape(-1, 1)

            gen_in_fact = np.column_stack([base[rows], z, ts[rows]])
            y_fact = gen.forward(gen_in_fact)[:, 0]
            r_losses.append(float(np.mean((y_fact - ys[rows]) ** 2)))
            delta_fact = (
                cfg.recon_weight * 2.0 * (y_fact - ys[rows]) / b
            ).reshape(-1, 1)

            gen_in_all = np.vstack([gen_in_cf, gen_in_fact])
            delta_all = np.vstack([delta_cf, delta_fact])
            gen_opt.step(gen, backprop(gen, gen_in_all, delta_all))

        epoch_disc = float(np.mean(d_losses))
        if not np.isfinite(epoch_disc):
            raise DivergenceError(
                f"non-finite discriminator loss at epoch {epoch + 1}; "
                "lower the learning rate"
            )
        disc_trace.append(epoch_disc)
        gen_trace.append(float(np.mean(g_losses)))
        recon_trace.append(float(np.mean(r_losses)))
        low_streak = low_streak + 1 if epoch_disc < low_threshold else 0
        if low_streak >= DIVERGENCE_WINDOW:
            raise DivergenceError(
                f"discriminator loss below {low_threshold:.4f} for "
                f"{DIVERGENCE_WINDOW} consecutive epochs (epoch {epoch + 1}): "
                "the generator has collapsed; lower the learning rate"
            )
    return gen, disc, disc_trace, gen_trace, recon_trace


def fit_scigan(
    train_data: tuple,
    valid_data: tuple,
    kind: str,
    cfg: SciganConfig | None = None,
    grid: TreatmentGrid | None = None,
) -> EnsembleOutcomeEstimator:
    """Counterfactual-GAN estimator: adversarial phase, then augmented fit.

    Phase 1 trains ``generator_count`` independent GANs on the training
    split; each discriminator sees, per contract, ``dosage_set_size``
    frequency-outcome pairs with the factual pair hidden at a random
    position and generated outcomes at frequencies drawn uniformly over
    the range. Phase 2 adds ``augmentation_per_contract`` generated pairs
    per contract, each target the median across generators of a
    ``z_draws``-noise average (single GAN fits occasionally settle in a
    degenerate equilibrium with perfectly healthy loss traces; the median
    discards those votes). The union with all factual pairs is fit by MSE
    by ``inference_count`` networks, each early-stopped on factual
    validation MSE only, and predictions average the ensemble.
    """
    _check_kind(kind)
    cfg = cfg or SciganConfig()
    grid = grid or TreatmentGrid.default()
    X_tr, t_tr, y_tr = _check_arrays("train", train_data)
    X_va, t_va, y_va = _check_arrays("valid", valid_data)

    scale = _y_scale(y_tr)
    ts = t_tr / PM_FREQ_MAX
    ys = y_tr / scale
    members = [
        _gan_phase(X_tr, ts, ys, kind, cfg, seed=cfg.train.seed * 64 + k)
        for k in range(cfg.generator_count)
    ]

    # phase 2: augmented supervised fit on generator-ensemble targets
    n, d = X_tr.shape
    m_aug = cfg.augmentation_per_contract
    rng = _stream_rng(_derived_seed(cfg.train.seed, kind, _ROLE_INFERENCE), _STREAM_AUGMENT)
    dos_aug = rng.uniform(0.0, 1.0, (n, m_aug))
    base_rep = np.repeat(np.column_stack([X_tr, ts, ys]), m_aug, axis=0)
    votes = np.empty((cfg.generator_count, n * m_aug))
    for gi, (gen, *_unused) in enumerate(members):
        acc = np.zeros(n * m_aug)
        for _ in range(cfg.z_draws):
            z = rng.standard_normal((n * m_aug, cfg.noise_dim))
            acc += gen.forward(
                np.column_stack([base_rep, z, dos_aug.reshape(-1, 1)])
            )[:, 0]
        votes[gi] = acc / cfg.z_draws
    y_aug = np.median(votes, axis=0)

    inp_factual = np.column_stack([X_tr, ts])
    inp_aug = np.column_stack([np.repeat(X_tr, m_aug, axis=0), dos_aug.reshape(-1, 1)])
    inp_all = np.vstack([inp_factual, inp_aug])
    y_all = np.concatenate([ys, y_aug])
    valid = (np.column_stack([X_va, t_va / PM_FREQ_MAX]), (y_va / scale)[:, None])

    nets: list[Mlp] = []
    histories = []
    for r in range(cfg.inference_count):
        net_seed = _derived_seed(cfg.train.seed, kind, _ROLE_INFERENCE) + 1000 * r
        inference = Mlp(
            (d + 1, *cfg.inference_hidden, 1), output_activation="sigmoid", seed=net_seed
        )
        fitted, history = train(
            inference,
            (inp_all, y_all[:, None]),
            valid,
            dataclasses.replace(cfg.train, seed=net_seed),
        )
        nets.append(fitted)
        histories.append(history)

    est = EnsembleOutcomeEstimator(
        estimator="scigan",
        kind=kind,
        nets=nets,
        y_scale=scale,
        grid=grid,
        config=cfg.to_dict(),
    )
    est.history = histories[0]
    est.histories = tuple(histories)
    est.components = SciganComponents(
        generator=members[0][0],
        discriminator=members[0][1],
        inference=nets[0],
        disc_loss=members[0][2],
        gen_adv_loss=members[0][3],
        recon_loss=members[0][4],
        generators=tuple(m[0] for m in members),
        discriminators=tuple(m[1] for m in members),
        inference_nets=tuple(nets),
    )
    return est


@dataclass(frozen=True)
class SearchSpace:
    """Grid for optional hyperparameter selection on validation MSE."""

    learning_rates: tuple[float, ...] = (0.01, 0.05)
    hidden_widths: tuple[int, ...] = (32, 64)

    def __post_init__(self) -> None:
        if len(self.learning_rates) == 0 or len(self.hidden_widths) == 0:
            raise ValidationError("search space must be nonempty on both axes")


def search_supervised(
    train_data: tuple,
    valid_data: tuple,
    kind: str,
    space: SearchSpace | None = None,
    cfg: SupervisedConfig | None = None,
    grid: TreatmentGrid | None = None,
) -> MlpOutcomeEstimator:
    """Fit the supervised baseline at every grid point, keep the best.

    Selection is by best validation MSE reached during each fit; ties go
    to the earlier grid entry, so the search is deterministic.
    """
    space = space or SearchSpace()
    cfg = cfg or SupervisedConfig()
    best: MlpOutcomeEstimator | None = None
    best_loss = np.inf
    for lr in space.learning_rates:
        for width in space.hidden_widths:
            candidate_cfg = SupervisedConfig(
                hidden=tuple(width for _ in cfg.hidden),
                train=dataclasses.replace(cfg.train, learning_rate=lr),
            )
            est = fit_supervised(train_data, valid_data, kind, candidate_cfg, grid)
            if est.history.best_valid_loss < best_loss:
                best_loss = est.history.best_valid_loss
                best = est
    return best


def average_effect_estimator(
    e: OutcomeEstimator, X: np.ndarray
) -> Callable[[float | np.ndarray], float | np.ndarray]:
    """Population-average outcome curve t -> mean_i e.predict(x_i, t).

    The returned callable accepts a scalar or an array of frequencies and
    is what an average-effect policy optimizes: one shared frequency for
    the whole supplied population.
    """
    if not e.trained:
        raise ValidationError("estimator must be trained")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValidationError("population must be nonempty")

    def mean_outcome(t):
        t_arr = np.asarray(t, dtype=float)
        if t_arr.ndim == 0:
            return float(np.mean(e.predict(X, float(t_arr))))
        return np.array([float(np.mean(e.predict(X, float(v)))) for v in t_arr])

    return mean_outcome
