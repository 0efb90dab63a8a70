"""Experiment configuration: validation, round-trips, hashing."""

import dataclasses

import pytest

from maintcause.config import (
    CONFIG_VERSION,
    ExperimentConfig,
    benchmark_costs,
    canonical_json,
    config_hash,
)
from maintcause.domain import CostParams, TreatmentGrid, ValidationError


def test_defaults_reproduce_benchmark_shape():
    cfg = ExperimentConfig()
    assert cfg.n == 4000
    assert cfg.bias_levels == (0.0, 10.0, 20.0, 30.0)
    assert cfg.seeds == (1, 2, 3, 4, 5)
    assert cfg.policies == ("oracle", "mlp-ite", "scigan-ite", "scigan-ate")
    assert cfg.grid == TreatmentGrid.default()


def test_benchmark_costs_are_positive_and_ordered():
    cp = benchmark_costs()
    assert 0 < cp.c_pm < cp.c_failure < cp.c_overhaul


def test_cells_sorted_and_complete():
    cfg = ExperimentConfig(seeds=(5, 1), bias_levels=(20.0, 0.0))
    assert cfg.cells() == [(1, 0.0), (1, 20.0), (5, 0.0), (5, 20.0)]


@pytest.mark.parametrize(
    "changes",
    [
        {"n": 0},
        {"n": 7},
        {"n": 4.5},
        {"bias_levels": ()},
        {"bias_levels": (10.0, 10.0)},
        {"bias_levels": (-1.0,)},
        {"seeds": ()},
        {"seeds": (1, 1)},
        {"seeds": (-3,)},
        {"policies": ()},
        {"policies": ("oracle", "oracle")},
        {"policies": ("nearest-neighbor",)},
        {"out_dir": ""},
    ],
)
def test_invalid_configs_rejected(changes):
    with pytest.raises(ValidationError):
        ExperimentConfig(**changes)


def test_dict_round_trip_preserves_everything():
    cfg = ExperimentConfig(
        n=64,
        bias_levels=(0.0, 5.0),
        seeds=(2, 9),
        costs=CostParams(10.0, 100.0, 50.0),
        policies=("oracle", "mlp-ite"),
        out_dir="elsewhere",
    )
    doc = cfg.to_dict()
    assert doc["version"] == CONFIG_VERSION
    back = ExperimentConfig.from_dict(doc)
    assert back == cfg


def test_from_dict_rejects_unknown_keys():
    doc = ExperimentConfig().to_dict()
    doc["n_epochs"] = 3
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(doc)
    nested = ExperimentConfig().to_dict()
    nested["supervised"]["width"] = 12
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(nested)


def test_from_dict_partial_overrides_keep_defaults():
    cfg = ExperimentConfig.from_dict({"n": 128, "seeds": [7]})
    assert cfg.n == 128
    assert cfg.seeds == (7,)
    assert cfg.bias_levels == ExperimentConfig().bias_levels
    assert cfg.scigan == ExperimentConfig().scigan


def test_from_dict_rejects_other_versions():
    doc = ExperimentConfig().to_dict()
    doc["version"] = 99
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict(doc)


def test_canonical_json_is_key_order_independent():
    assert canonical_json({"b": 1, "a": [1, 2]}) == canonical_json({"a": [1, 2], "b": 1})
    with pytest.raises(ValueError):
        canonical_json({"x": float("nan")})


def test_config_hash_ignores_out_dir_only():
    cfg = ExperimentConfig()
    assert config_hash(cfg) == config_hash(dataclasses.replace(cfg, out_dir="other"))
    assert config_hash(cfg) != config_hash(dataclasses.replace(cfg, n=4001))
    assert config_hash(cfg) != config_hash(dataclasses.replace(cfg, seeds=(1,)))
    assert config_hash(cfg) != config_hash(
        dataclasses.replace(cfg, costs=CostParams(26.0, 207.0, 104.0))
    )
    sup = dataclasses.replace(
        cfg.supervised, train=dataclasses.replace(cfg.supervised.train, epochs=77)
    )
    assert config_hash(cfg) != config_hash(dataclasses.replace(cfg, supervised=sup))


def test_config_hash_stable_across_processes():
    # the hash keys resumable sweeps, so it must not depend on runtime state
    assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())
    assert len(config_hash(ExperimentConfig())) == 12
