"""Minimal dense neural-network engine on numpy, deterministic per seed.

Feed-forward networks with ReLU hidden layers and a linear or sigmoid
output, exact analytic gradients for a mean-squared-error loss and a
softmax cross-entropy ("adversarial") loss, and a small training loop
with early stopping on validation loss. Everything runs in float64 on
the CPU; given the same seed and config, training is bit-reproducible.

The engine is intentionally tiny: no graphs, no autodiff, just explicit
backprop through a stack of dense layers. Gradients with respect to the
*input* batch are available too, which is what lets an adversarial
trainer push one network's output through another network's loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .domain import ValidationError

__all__ = [
    "Mlp",
    "Gradients",
    "TrainConfig",
    "TrainHistory",
    "DivergenceError",
    "LOSS_KINDS",
    "OPTIMIZER_KINDS",
    "loss_value",
    "loss_output_grad",
    "grad",
    "backprop",
    "train",
    "make_optimizer",
    "SgdMomentum",
    "Adam",
]

LOSS_KINDS = ("mse", "adversarial")
OPTIMIZER_KINDS = ("sgd", "adam")

CHECKPOINT_VERSION = 1

_STREAM_INIT = 11
_STREAM_SHUFFLE = 12


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss and was aborted."""


def _kernel_rng(seed: int, stream: int) -> np.random.Generator:
    key = np.array([seed, stream], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class Mlp:
    """Fully-connected network: ReLU hidden layers, linear or sigmoid output.

    ``widths`` lists layer sizes input-first, e.g. (15, 64, 64, 1).
    Weights start uniform on +-1/sqrt(fan_in) (variance-preserving without
    any library dependence), biases at zero. Parameters are plain numpy
    arrays in ``weights`` and ``biases``; training mutates them in place,
    so share a model across threads only after training has finished.
    """

    def __init__(
        self,
        widths: Sequence[int],
        output_activation: str = "linear",
        seed: int = 0,
    ) -> None:
        widths = tuple(int(w) for w in widths)
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ValidationError(f"widths must be >= 2 positive sizes, got {widths}")
        if output_activation not in ("linear", "sigmoid"):
            raise ValidationError(
                f"output_activation must be linear or sigmoid, got {output_activation!r}"
            )
        self.widths = widths
        self.output_activation = output_activation
        rng = _kernel_rng(seed, _STREAM_INIT)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "Mlp":
        dup = object.__new__(Mlp)
        dup.widths = self.widths
        dup.output_activation = self.output_activation
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def _check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=float)
        if batch.ndim != 2 or batch.shape[1] != self.widths[0]:
            raise ValidationError(
                f"batch must have shape (b, {self.widths[0]}), got {batch.shape}"
            )
        return batch

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """Map a (b, input_dim) batch to (b, output_dim) outputs."""
        a = self._check_batch(batch)
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            if k < last:
                a = np.maximum(z, 0.0)
            elif self.output_activation == "sigmoid":
                a = 1.0 / (1.0 + np.exp(-z))
            else:
                a = z
        return a

    def _forward_cached(self, batch: np.ndarray) -> tuple[np.ndarray, list, list]:
        a = self._check_batch(batch)
        pre: list[np.ndarray] = []
        acts: list[np.ndarray] = [a]
        last = self.n_layers - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            pre.append(z)
            if k < last:
                acts.append(np.maximum(z, 0.0))
            elif self.output_activation == "sigmoid":
                acts.append(1.0 / (1.0 + np.exp(-z)))
            else:
                acts.append(z)
        return acts[-1], pre, acts

    def to_doc(self) -> dict:
        """Self-describing checkpoint document (JSON-serializable, exact floats)."""
        return {
            "version": CHECKPOINT_VERSION,
            "kind": "mlp",
            "widths": list(self.widths),
            "hidden_activation": "relu",
            "output_activation": self.output_activation,
            "weights": [[[float(v) for v in row] for row in w] for w in self.weights],
            "biases": [[float(v) for v in b] for b in self.biases],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Mlp":
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint version {doc.get('version')!r}"
            )
        if doc.get("kind") != "mlp":
            raise ValidationError(f"not an mlp checkpoint: kind={doc.get('kind')!r}")
        m = cls(doc["widths"], output_activation=doc["output_activation"])
        for k, (w, b) in enumerate(zip(doc["weights"], doc["biases"])):
            w = np.asarray(w, dtype=float)
            b = np.asarray(b, dtype=float)
            if w.shape != m.weights[k].shape or b.shape != m.biases[k].shape:
                raise ValidationError(f"layer {k} arrays do not match widths")
            m.weights[k] = w
            m.biases[k] = b
        return m


@dataclass(frozen=True)
class Gradients:
    """Analytic gradients for one batch: per-layer arrays plus optional input grad."""

    weights: list
    biases: list
    inputs: np.ndarray | None = None


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_loss(loss: str) -> None:
    if loss not in LOSS_KINDS:
        raise ValidationError(f"loss must be one of {LOSS_KINDS}, got {loss!r}")


def loss_value(loss: str, outputs: np.ndarray, targets: np.ndarray) -> float:
    """Scalar loss of a batch of network outputs.

    ``mse`` averages squared error over every output entry. ``adversarial``
    is softmax cross-entropy where targets are integer class indices, one
    per row; it is the discriminator objective of an adversarial pair.
    """
    _check_loss(loss)
    outputs = np.asarray(outputs, dtype=float)
    if loss == "mse":
        targets = np.asarray(targets, dtype=float)
        if targets.shape != outputs.shape:
            raise ValidationError(
                f"mse targets must match outputs {outputs.shape}, got {targets.shape}"
            )
        return float(np.mean((outputs - targets) ** 2))
    idx = np.asarray(targets)
    if idx.shape != (outputs.shape[0],) or not np.issubdtype(idx.dtype, np.integer):
        raise ValidationError("adversarial targets must be integer class indices")
    z = outputs - outputs.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(log_norm - z[np.arange(len(idx)), idx]))


def loss_output_grad(loss: str, outputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """d(loss)/d(outputs), matching :func:`loss_value` exactly."""
    _check_loss(loss)
    outputs = np.asarray(outputs, dtype=float)
    if loss == "mse":
        targets = np.asarray(targets, dtype=float)
        return 2.0 * (outputs - targets) / outputs.size
    idx = np.asarray(targets)
    p = _softmax(outputs)
    p[np.arange(len(idx)), idx] -= 1.0
    return p / outputs.shape[0]


def _backprop_cached(
    m: Mlp,
    pre: list,
    acts: list,
    delta: np.ndarray,
    with_inputs: bool,
) -> Gradients:
    g_w: list[np.ndarray] = [None] * m.n_layers
    g_b: list[np.ndarray] = [None] * m.n_layers
    for k in range(m.n_layers - 1, -1, -1):
        g_w[k] = acts[k].T @ delta
        g_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ m.weights[k].T) * (pre[k - 1] > 0.0)
        elif with_inputs:
            delta = delta @ m.weights[0].T
    return Gradients(
        weights=g_w, biases=g_b, inputs=delta if with_inputs else None
    )


def grad(
    m: Mlp,
    batch: np.ndarray,
    targets: np.ndarray,
    loss: str = "mse",
    with_inputs: bool = False,
) -> Gradients:
    """Exact analytic gradients of the batch loss w.r.t. every parameter.

    With ``with_inputs=True`` the gradient w.r.t. the batch itself is
    returned as well, which lets a caller chain this network's loss onto
    the output of another network.
    """
    outputs, pre, acts = m._forward_cached(batch)
    delta = loss_output_grad(loss, outputs, targets)
    if m.output_activation == "sigmoid":
        delta = delta * outputs * (1.0 - outputs)
    return _backprop_cached(m, pre, acts, delta, with_inputs)


def backprop(
    m: Mlp,
    batch: np.ndarray,
    output_grad: np.ndarray,
    with_inputs: bool = False,
) -> Gradients:
    """Parameter gradients given d(loss)/d(outputs) supplied by the caller.

    This is the chaining primitive: feed it the input-gradient slice of a
    downstream network to train this one through it.
    """
    outputs, pre, acts = m._forward_cached(batch)
    delta = np.asarray(output_grad, dtype=float)
    if delta.shape != outputs.shape:
        raise ValidationError(
            f"output_grad must have shape {outputs.shape}, got {delta.shape}"
        )
    if m.output_activation == "sigmoid":
        delta = delta * outputs * (1.0 - outputs)
    return _backprop_cached(m, pre, acts, delta, with_inputs)


class SgdMomentum:
    """Stochastic gradient descent with classical momentum."""

    def __init__(self, model: Mlp, learning_rate: float, momentum: float = 0.9):
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, model: Mlp, g: Gradients) -> None:
        for k in range(model.n_layers):
            self.v_w[k] = self.momentum * self.v_w[k] - self.learning_rate * g.weights[k]
            self.v_b[k] = self.momentum * self.v_b[k] - self.learning_rate * g.biases[k]
            model.weights[k] += self.v_w[k]
            model.biases[k] += self.v_b[k]


class Adam:
    """Adam optimizer with the usual (0.9, 0.999, 1e-8) constants."""

    def __init__(self, model: Mlp, learning_rate: float):
        self.learning_rate = learning_rate
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in model.weights]
        self.v_w = [np.zeros_like(w) for w in model.weights]
        self.m_b = [np.zeros_like(b) for b in model.biases]
        self.v_b = [np.zeros_like(b) for b in model.biases]

    def step(self, model: Mlp, g: Gradients) -> None:
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k in range(model.n_layers):
            for m_, v_, g_, p in (
                (self.m_w, self.v_w, g.weights, model.weights),
                (self.m_b, self.v_b, g.biases, model.biases),
            ):
                m_[k] = b1 * m_[k] + (1 - b1) * g_[k]
                v_[k] = b2 * v_[k] + (1 - b2) * g_[k] ** 2
                p[k] -= self.learning_rate * (m_[k] / c1) / (np.sqrt(v_[k] / c2) + eps)


@dataclass(frozen=True)
class TrainConfig:
    """Budget and optimizer settings for one supervised fit."""

    learning_rate: float = 0.05
    batch_size: int = 128
    epochs: int = 200
    patience: int = 10
    seed: int = 0
    optimizer: str = "sgd"
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0.0):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")
        if not (0 <= self.patience <= self.epochs):
            raise ValidationError(
                f"patience must lie in [0, epochs={self.epochs}], got {self.patience}"
            )
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ValidationError(
                f"optimizer must be one of {OPTIMIZER_KINDS}, got {self.optimizer!r}"
            )
        if not (0.0 <= self.momentum < 1.0):
            raise ValidationError(f"momentum must be in [0, 1), got {self.momentum}")


def make_optimizer(model: Mlp, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(model, cfg.learning_rate)
    return SgdMomentum(model, cfg.learning_rate, cfg.momentum)


@dataclass
class TrainHistory:
    """Per-epoch losses plus where early stopping settled."""

    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    best_valid_loss: float = float("inf")

    @property
    def n_epochs(self) -> int:
        return len(self.train_loss)


def train(
    m: Mlp,
    train_data: tuple[np.ndarray, np.ndarray],
    valid_data: tuple[np.ndarray, np.ndarray],
    cfg: TrainConfig,
    loss: str = "mse",
) -> tuple[Mlp, TrainHistory]:
    """Mini-batch fit with early stopping on validation loss.

    Returns the parameters with the best validation loss seen (a copy;
    the input model is not modified) together with the loss history.
    Stops once the run of non-improving epochs exceeds ``cfg.patience``;
    with patience 0, the first non-improving epoch ends training. A
    non-finite train or validation loss aborts with
    :class:`DivergenceError`.
    """
    _check_loss(loss)
    x_tr, y_tr = train_data
    x_va, y_va = valid_data
    x_tr = np.asarray(x_tr, dtype=float)
    x_va = np.asarray(x_va, dtype=float)
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValidationError("train and valid splits must be nonempty")

    model = m.copy()
    opt = make_optimizer(model, cfg)
    rng = _kernel_rng(cfg.seed, _STREAM_SHUFFLE)
    history = TrainHistory()
    best = model.copy()
    bad_epochs = 0

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_tr))
        for start in range(0, len(order), cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            g = grad(model, x_tr[rows], np.asarray(y_tr)[rows], loss)
            opt.step(model, g)
        tr = loss_value(loss, model.forward(x_tr), y_tr)
        va = loss_value(loss, model.forward(x_va), y_va)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise DivergenceError(
                f"non-finite loss at epoch {epoch + 1} "
                f"(train={tr}, valid={va}); lower the learning rate"
            )
        history.train_loss.append(tr)
        history.valid_loss.append(va)
        if va < history.best_valid_loss:
            history.best_valid_loss = va
            history.best_epoch = epoch
            best = model.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    return best, history
