"""Experiment configuration: schema, defaults, canonical hashing.

One :class:`ExperimentConfig` pins everything a benchmark run needs:
population size, bias levels, seeds, the treatment grid, cost
parameters, estimator settings, and the policies to evaluate. Configs
parse from plain dicts with strict key checking, serialize to canonical
JSON, and hash to a short digest that keys resumable sweep cells and
stamps every output file.

The default configuration is the desk-scale benchmark: 4000 contracts,
bias levels {0, 10, 20, 30}, five seeds. Default costs keep the
standard overhaul and failure prices but lower the PM price: at the
full published PM price the marginal cost of one more PM event exceeds
the largest possible marginal benefit, so the optimal frequency is zero
for every contract and all policies trivially tie. A PM price of 25
spreads the true optima across the whole frequency range.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .domain import CostParams, TreatmentGrid, ValidationError
from .estimators import SciganConfig, SupervisedConfig
from .nncore import TrainConfig
from .policy import POLICY_NAMES

__all__ = [
    "CONFIG_VERSION",
    "ExperimentConfig",
    "benchmark_costs",
    "canonical_json",
    "config_hash",
]

CONFIG_VERSION = 1


def benchmark_costs() -> CostParams:
    """Default experiment economics; see the module docstring for the PM price."""
    return CostParams(c_pm=25.0, c_overhaul=207.0, c_failure=104.0)


def canonical_json(obj) -> str:
    """Deterministic JSON text: sorted keys, no whitespace, no NaN/Inf."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def _strict_keys(doc: dict, allowed, where: str) -> None:
    if not isinstance(doc, dict):
        raise ValidationError(f"{where} must be a mapping, got {type(doc).__name__}")
    unknown = set(doc) - set(allowed)
    if unknown:
        raise ValidationError(f"unknown {where} key(s): {sorted(unknown)}")


def _train_from_dict(doc: dict) -> TrainConfig:
    names = [f.name for f in dataclasses.fields(TrainConfig)]
    _strict_keys(doc, names, "training config")
    return TrainConfig(**doc)


def _supervised_from_dict(doc: dict) -> SupervisedConfig:
    _strict_keys(doc, ("hidden", "train"), "supervised config")
    kwargs = {}
    if "hidden" in doc:
        kwargs["hidden"] = tuple(doc["hidden"])
    if "train" in doc:
        kwargs["train"] = _train_from_dict(doc["train"])
    return SupervisedConfig(**kwargs)


def _scigan_from_dict(doc: dict) -> SciganConfig:
    names = [f.name for f in dataclasses.fields(SciganConfig)]
    _strict_keys(doc, names, "scigan config")
    kwargs = dict(doc)
    for name in ("gen_hidden", "disc_hidden", "inference_hidden"):
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    if "train" in kwargs:
        kwargs["train"] = _train_from_dict(kwargs["train"])
    return SciganConfig(**kwargs)


def _costs_from_dict(doc: dict) -> CostParams:
    _strict_keys(doc, ("c_pm", "c_overhaul", "c_failure"), "cost config")
    base = benchmark_costs()
    return CostParams(
        c_pm=doc.get("c_pm", base.c_pm),
        c_overhaul=doc.get("c_overhaul", base.c_overhaul),
        c_failure=doc.get("c_failure", base.c_failure),
    )


def _grid_from_dict(doc: dict) -> TreatmentGrid:
    _strict_keys(doc, ("t_min", "t_max", "step"), "grid config")
    default = TreatmentGrid.default()
    return TreatmentGrid(
        t_min=doc.get("t_min", default.t_min),
        t_max=doc.get("t_max", default.t_max),
        step=doc.get("step", default.step),
    )


_TOP_KEYS = (
    "version",
    "n",
    "bias_levels",
    "seeds",
    "grid",
    "costs",
    "supervised",
    "scigan",
    "policies",
    "out_dir",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete specification of one benchmark experiment."""

    n: int = 4000
    bias_levels: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0)
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    grid: TreatmentGrid = field(default_factory=TreatmentGrid.default)
    costs: CostParams = field(default_factory=benchmark_costs)
    supervised: SupervisedConfig = field(default_factory=SupervisedConfig)
    scigan: SciganConfig = field(default_factory=SciganConfig)
    policies: tuple[str, ...] = ("oracle", "mlp-ite", "scigan-ite", "scigan-ate")
    out_dir: str = "runs"

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 8:
            raise ValidationError(f"n must be an integer >= 8, got {self.n!r}")
        levels = tuple(float(b) for b in self.bias_levels)
        if not levels:
            raise ValidationError("bias_levels must be nonempty")
        if not all(np.isfinite(b) and b >= 0.0 for b in levels):
            raise ValidationError(f"bias_levels must be finite and >= 0, got {levels}")
        if len(set(levels)) != len(levels):
            raise ValidationError(f"bias_levels must be unique, got {levels}")
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds or len(set(seeds)) != len(seeds):
            raise ValidationError(f"seeds must be nonempty and unique, got {self.seeds}")
        if any(s < 0 for s in seeds):
            raise ValidationError(f"seeds must be >= 0, got {seeds}")
        policies = tuple(str(p) for p in self.policies)
        if not policies or len(set(policies)) != len(policies):
            raise ValidationError("policies must be nonempty and unique")
        bad = [p for p in policies if p not in POLICY_NAMES]
        if bad:
            raise ValidationError(f"unknown policy name(s) {bad}; known: {POLICY_NAMES}")
        if not isinstance(self.out_dir, str) or not self.out_dir:
            raise ValidationError("out_dir must be a nonempty string")
        object.__setattr__(self, "bias_levels", levels)
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "policies", policies)

    def cells(self) -> list[tuple[int, float]]:
        """All (seed, bias level) pairs, in deterministic sorted order."""
        return sorted((s, b) for s in self.seeds for b in self.bias_levels)

    def to_dict(self) -> dict:
        return {
            "version": CONFIG_VERSION,
            "n": self.n,
            "bias_levels": list(self.bias_levels),
            "seeds": list(self.seeds),
            "grid": self.grid.to_dict(),
            "costs": {
                "c_pm": self.costs.c_pm,
                "c_overhaul": self.costs.c_overhaul,
                "c_failure": self.costs.c_failure,
            },
            "supervised": self.supervised.to_dict(),
            "scigan": self.scigan.to_dict(),
            "policies": list(self.policies),
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        _strict_keys(doc, _TOP_KEYS, "config")
        version = doc.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValidationError(f"unsupported config version {version!r}")
        kwargs = {}
        for name in ("n", "out_dir"):
            if name in doc:
                kwargs[name] = doc[name]
        for name in ("bias_levels", "seeds", "policies"):
            if name in doc:
                kwargs[name] = tuple(doc[name])
        if "grid" in doc:
            kwargs["grid"] = _grid_from_dict(doc["grid"])
        if "costs" in doc:
            kwargs["costs"] = _costs_from_dict(doc["costs"])
        if "supervised" in doc:
            kwargs["supervised"] = _supervised_from_dict(doc["supervised"])
        if "scigan" in doc:
            kwargs["scigan"] = _scigan_from_dict(doc["scigan"])
        return cls(**kwargs)


def config_hash(config: ExperimentConfig) -> str:
    """Digest of the scientific content of a config.

    The output directory is excluded: moving results elsewhere must not
    change what experiment they identify.
    """
    doc = config.to_dict()
    doc.pop("out_dir")
    return hashlib.sha256(canonical_json(doc).encode("ascii")).hexdigest()[:12]
