"""File formats for every artifact the toolkit reads or writes.

One generated population lives in a directory holding three files:
``contracts.csv`` (one row per contract: id, raw covariates, split,
assigned PM frequency, observed outcomes), ``oracle.bin`` (the hidden
outcome/assignment models and per-contract noise, base64-packed float64
so reloading is bit-exact), and ``meta.json`` (seed, bias level, split
layout, standardization statistics). Trained estimators persist as a
checkpoint file plus a training-history file per (family, outcome)
pair; prescriptions and plot data are flat CSVs; experiment reports are
JSON.

Every format starts with a schema-version field, and every JSON
document embeds the config hash and seed it came from. The CSV formats
cannot carry those fields without breaking their fixed row/column
schemas, so they are identified by the JSON files beside them. All
writers are deterministic: same inputs, same bytes, no timestamps.

Reloading a dataset reproduces the generator's output exactly: raw
covariate text round-trips through ``repr``, the standardization
statistics are revalidated against a recomputation from the training
rows, and features are re-encoded with the same code path.
"""

from __future__ import annotations

import base64
import csv
import io
import json
from pathlib import Path

import numpy as np

from .datagen import BiasModel, Oracle, TrueOutcomeModel
from .domain import (
    SPLIT_NAMES,
    Contract,
    Covariates,
    Dataset,
    DatasetMeta,
    StandardizationStats,
    TreatmentGrid,
    ValidationError,
    encode_matrix,
)
from .estimators import OutcomeEstimator, estimator_from_doc
from .evaluation import CellResult, ExperimentReport
from .policy import Prescription

__all__ = [
    "FORMAT_VERSION",
    "CONTRACTS_FILE",
    "ORACLE_FILE",
    "META_FILE",
    "REPORT_FILE",
    "PRESCRIPTIONS_FILE",
    "PLOT_FILES",
    "CONTRACT_COLUMNS",
    "PRESCRIPTION_COLUMNS",
    "PLOT_COLUMNS",
    "checkpoint_path",
    "history_path",
    "cell_path",
    "write_dataset",
    "load_dataset",
    "load_oracle",
    "write_estimator",
    "load_estimator",
    "write_history",
    "write_prescriptions",
    "load_prescriptions",
    "write_report",
    "load_report",
    "write_cell",
    "load_cell",
]

FORMAT_VERSION = 1

CONTRACTS_FILE = "contracts.csv"
ORACLE_FILE = "oracle.bin"
META_FILE = "meta.json"
REPORT_FILE = "report.json"
PRESCRIPTIONS_FILE = "prescriptions.csv"

#: Plot-data files emitted beside a report, keyed by metric.
PLOT_FILES = {
    "mise": "mise_vs_lambda.csv",
    "pe": "pe_vs_lambda.csv",
    "pcr": "pcr_vs_lambda.csv",
}

#: Raw covariates appear in declaration order, then split and observations.
CONTRACT_COLUMNS = (
    "id",
    "machine_type",
    "age_at_start",
    "hours_at_start",
    "hours_during",
    "avg_hours_per_year",
    "contract_type",
    "duration_days",
    "split",
    "pm_freq",
    "overhauls",
    "failures",
)
PRESCRIPTION_COLUMNS = ("id", "policy", "prescribed_t", "estimated_cost", "true_cost")
PLOT_COLUMNS = ("lambda", "policy_or_model", "mean", "std")


def _fmt(value: float) -> str:
    """Shortest decimal text that parses back to the same float."""
    return repr(float(value))


def _dump_json(doc: dict) -> str:
    # insertion order is kept so the version field stays first
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.write_bytes(text.encode("utf-8"))


def _read_json(path: Path) -> dict:
    try:
        doc = json.loads(path.read_bytes())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path} must hold a JSON object")
    return doc


def _check_envelope(doc: dict, kind: str, where: str) -> None:
    if doc.get("version") != FORMAT_VERSION:
        raise ValidationError(
            f"{where}: unsupported schema version {doc.get('version')!r}"
        )
    if doc.get("kind") != kind:
        raise ValidationError(f"{where}: expected kind {kind!r}, got {doc.get('kind')!r}")


def _b64(arr: np.ndarray, dtype: str) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype=dtype).tobytes()).decode(
        "ascii"
    )


def _unb64(text: str, dtype: str, where: str) -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except Exception:
        raise ValidationError(f"{where} is not valid base64") from None
    return np.frombuffer(raw, dtype=dtype)


def checkpoint_path(out_dir: str | Path, family: str, kind: str) -> Path:
    return Path(out_dir) / f"{family}_{kind}.checkpoint.json"


def history_path(out_dir: str | Path, family: str, kind: str) -> Path:
    return Path(out_dir) / f"{family}_{kind}.history.json"


def cell_path(out_dir: str | Path, bias_level: float, seed: int) -> Path:
    """Per-cell result file inside a sweep's cells/ tree."""
    return Path(out_dir) / "cells" / f"lam{bias_level:g}_seed{seed}" / "cell.json"


# --- datasets ---------------------------------------------------------------


def write_dataset(
    out_dir: str | Path, dataset: Dataset, oracle: Oracle, cfg_hash: str
) -> dict[str, Path]:
    """Write contracts.csv, oracle.bin, and meta.json into a directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "contracts": out / CONTRACTS_FILE,
        "oracle": out / ORACLE_FILE,
        "meta": out / META_FILE,
    }

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CONTRACT_COLUMNS)
    for c in dataset.contracts:
        cov = c.covariates
        writer.writerow(
            [
                c.id,
                cov.machine_type,
                _fmt(cov.age_at_start),
                _fmt(cov.hours_at_start),
                _fmt(cov.hours_during),
                _fmt(cov.avg_hours_per_year),
                cov.contract_type,
                _fmt(cov.duration_days),
                dataset.split_labels[c.id],
                _fmt(c.pm_freq),
                _fmt(c.overhauls),
                _fmt(c.failures),
            ]
        )
    _write_text(paths["contracts"], buf.getvalue())

    meta = dataset.metadata
    meta_doc = {
        "version": FORMAT_VERSION,
        "kind": "dataset_meta",
        "config_hash": cfg_hash,
        **meta.to_dict(),
        "grid": oracle.grid.to_dict(),
    }
    _write_text(paths["meta"], _dump_json(meta_doc))

    model, bias = oracle.model, oracle.bias
    oracle_doc = {
        "version": FORMAT_VERSION,
        "kind": "oracle",
        "config_hash": cfg_hash,
        "seed": oracle.seed,
        "bias_level": bias.bias_level,
        "grid": oracle.grid.to_dict(),
        "model": {
            "v_o": _b64(model.v_o, "<f8"),
            "w_o": _b64(model.w_o, "<f8"),
            "v_f": _b64(model.v_f, "<f8"),
            "w_f": _b64(model.w_f, "<f8"),
            "scale_overhauls": model.scale_overhauls,
            "scale_failures": model.scale_failures,
            "pm_effect_slope": model.pm_effect_slope,
        },
        "bias": {
            "w_b": _b64(bias.w_b, "<f8"),
            "bias_level": bias.bias_level,
            "index_center": bias.index_center,
            "index_scale": bias.index_scale,
        },
        "ids": _b64(oracle.ids, "<i8"),
        "feature_dim": int(oracle.features.shape[1]),
        "features": _b64(oracle.features, "<f8"),
        "eps_o": _b64(oracle.eps_o, "<f8"),
        "eps_f": _b64(oracle.eps_f, "<f8"),
        "split_labels": [oracle.split_labels[int(i)] for i in oracle.ids],
    }
    paths["oracle"].write_bytes(
        json.dumps(oracle_doc, separators=(",", ":"), allow_nan=False).encode("ascii")
    )
    return paths


def _covariates_from_row(row: dict[str, str]) -> Covariates:
    try:
        return Covariates(
            machine_type=int(row["machine_type"]),
            age_at_start=float(row["age_at_start"]),
            hours_at_start=float(row["hours_at_start"]),
            hours_during=float(row["hours_during"]),
            avg_hours_per_year=float(row["avg_hours_per_year"]),
            contract_type=int(row["contract_type"]),
            duration_days=float(row["duration_days"]),
        )
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"bad contract row: {exc}") from None


def load_dataset(out_dir: str | Path) -> Dataset:
    """Rebuild a dataset from contracts.csv + meta.json, bit-exact.

    Features are re-encoded from the raw covariate text; the
    standardization statistics from meta.json must match a fresh fit on
    the training rows, which catches hand-edits to either file.
    """
    out = Path(out_dir)
    meta_doc = _read_json(out / META_FILE)
    _check_envelope(meta_doc, "dataset_meta", str(out / META_FILE))

    rows = []
    with open(out / CONTRACTS_FILE, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CONTRACT_COLUMNS:
            raise ValidationError(
                f"{out / CONTRACTS_FILE}: header must be {','.join(CONTRACT_COLUMNS)}"
            )
        for row in reader:
            rows.append(row)

    n = meta_doc.get("n")
    if n != len(rows):
        raise ValidationError(
            f"meta.json says n={n} but contracts.csv has {len(rows)} rows"
        )

    covs, labels = [], {}
    for row in rows:
        cov = _covariates_from_row(row)
        covs.append(cov)
        cid = int(row["id"])
        if row["split"] not in SPLIT_NAMES:
            raise ValidationError(f"contract {cid}: unknown split {row['split']!r}")
        labels[cid] = row["split"]

    std = meta_doc.get("standardization", {})
    stats = StandardizationStats(
        means=np.array(std.get("means", []), dtype=float),
        stds=np.array(std.get("stds", []), dtype=float),
    )
    refit = StandardizationStats.from_training(
        [cov for cov, row in zip(covs, rows) if row["split"] == "train"]
    )
    if not (
        np.array_equal(refit.means, stats.means)
        and np.array_equal(refit.stds, stats.stds)
    ):
        raise ValidationError(
            "standardization statistics in meta.json do not match the training "
            "rows; the dataset files were edited or corrupted"
        )

    features = encode_matrix(covs, stats)
    contracts = tuple(
        Contract(
            id=int(row["id"]),
            covariates=cov,
            features=features[i],
            pm_freq=float(row["pm_freq"]),
            overhauls=float(row["overhauls"]),
            failures=float(row["failures"]),
        )
        for i, (row, cov) in enumerate(zip(rows, covs))
    )
    meta = DatasetMeta(
        seed=meta_doc["seed"],
        bias_level=meta_doc["bias_level"],
        n=len(contracts),
        split_counts=dict(meta_doc["split_counts"]),
        stats=stats,
    )
    return Dataset(contracts=contracts, split_labels=labels, metadata=meta)


def load_oracle(out_dir: str | Path) -> Oracle:
    """Rebuild the generator's oracle from oracle.bin."""
    path = Path(out_dir) / ORACLE_FILE
    doc = _read_json(path)
    _check_envelope(doc, "oracle", str(path))
    where = str(path)

    m = doc["model"]
    model = TrueOutcomeModel(
        v_o=_unb64(m["v_o"], "<f8", where),
        w_o=_unb64(m["w_o"], "<f8", where),
        v_f=_unb64(m["v_f"], "<f8", where),
        w_f=_unb64(m["w_f"], "<f8", where),
        scale_overhauls=m["scale_overhauls"],
        scale_failures=m["scale_failures"],
        pm_effect_slope=m["pm_effect_slope"],
    )
    b = doc["bias"]
    bias = BiasModel(
        w_b=_unb64(b["w_b"], "<f8", where),
        bias_level=b["bias_level"],
        index_center=b["index_center"],
        index_scale=b["index_scale"],
    )
    ids = _unb64(doc["ids"], "<i8", where)
    d = doc["feature_dim"]
    flat = _unb64(doc["features"], "<f8", where)
    if d < 1 or flat.size != ids.size * d:
        raise ValidationError(f"{where}: features do not match ids x feature_dim")
    labels = doc["split_labels"]
    if len(labels) != ids.size:
        raise ValidationError(f"{where}: split_labels do not cover the ids")
    return Oracle(
        model=model,
        bias=bias,
        ids=ids,
        features=flat.reshape(ids.size, d),
        eps_o=_unb64(doc["eps_o"], "<f8", where),
        eps_f=_unb64(doc["eps_f"], "<f8", where),
        split_labels={int(i): s for i, s in zip(ids, labels)},
        grid=TreatmentGrid.from_dict(doc["grid"]),
        seed=doc["seed"],
    )


# --- estimators -------------------------------------------------------------


def write_estimator(
    path: str | Path, est: OutcomeEstimator, cfg_hash: str, seed: int
) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "estimator_checkpoint",
        "config_hash": cfg_hash,
        "seed": seed,
        "estimator": est.to_doc(),
    }
    _write_text(Path(path), _dump_json(doc))


def load_estimator(path: str | Path) -> OutcomeEstimator:
    doc = _read_json(Path(path))
    _check_envelope(doc, "estimator_checkpoint", str(path))
    return estimator_from_doc(doc["estimator"])


def _history_entry(history, y_scale: float) -> dict:
    # losses are recorded on scale-normalized outcomes; report them in
    # outcome units so they read as validation MSE on observed counts
    factor = y_scale**2
    return {
        "train_mse": [v * factor for v in history.train_loss],
        "valid_mse": [v * factor for v in history.valid_loss],
        "best_epoch": history.best_epoch,
        "best_valid_mse": history.best_valid_loss * factor,
    }


def write_history(path: str | Path, est, cfg_hash: str, seed: int) -> None:
    """Per-epoch validation MSE of every network behind an estimator."""
    histories = getattr(est, "histories", None) or (est.history,)
    doc = {
        "version": FORMAT_VERSION,
        "kind": "training_history",
        "config_hash": cfg_hash,
        "seed": seed,
        "estimator": est.estimator,
        "outcome": est.kind,
        "members": [_history_entry(h, est.y_scale) for h in histories],
    }
    _write_text(Path(path), _dump_json(doc))


# --- prescriptions ----------------------------------------------------------


def write_prescriptions(path: str | Path, prescriptions) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PRESCRIPTION_COLUMNS)
    for p in prescriptions:
        writer.writerow(
            [
                p.id,
                p.policy,
                _fmt(p.prescribed_t),
                _fmt(p.estimated_cost),
                "" if p.true_cost is None else _fmt(p.true_cost),
            ]
        )
    _write_text(Path(path), buf.getvalue())


def load_prescriptions(path: str | Path) -> tuple[Prescription, ...]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != PRESCRIPTION_COLUMNS:
            raise ValidationError(
                f"{path}: header must be {','.join(PRESCRIPTION_COLUMNS)}"
            )
        for row in reader:
            try:
                out.append(
                    Prescription(
                        id=int(row["id"]),
                        policy=row["policy"],
                        prescribed_t=float(row["prescribed_t"]),
                        estimated_cost=float(row["estimated_cost"]),
                        true_cost=(
                            None if row["true_cost"] == "" else float(row["true_cost"])
                        ),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise ValidationError(f"bad prescription row: {exc}") from None
    return tuple(out)


# --- reports and plot data --------------------------------------------------


def write_report(out_dir: str | Path, report: ExperimentReport) -> dict[str, Path]:
    """Write report.json plus the three per-metric plot CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / REPORT_FILE}
    _write_text(paths["report"], _dump_json(report.to_dict()))
    for metric, filename in PLOT_FILES.items():
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for ev in report.reports:
            for key, stats in getattr(ev, metric).items():
                writer.writerow(
                    [_fmt(ev.bias_level), key, _fmt(stats["mean"]), _fmt(stats["std"])]
                )
        paths[metric] = out / filename
        _write_text(paths[metric], buf.getvalue())
    return paths


def load_report(path: str | Path) -> dict:
    """Read a report document and check its envelope; returns the raw dict."""
    doc = _read_json(Path(path))
    if "version" not in doc or "config_hash" not in doc:
        raise ValidationError(f"{path}: not a report document")
    return doc


# --- sweep cells ------------------------------------------------------------


def write_cell(out_dir: str | Path, cell: CellResult, cfg_hash: str) -> Path:
    path = cell_path(out_dir, cell.bias_level, cell.seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": FORMAT_VERSION,
        "kind": "experiment_cell",
        "config_hash": cfg_hash,
        **cell.to_dict(),
    }
    _write_text(path, _dump_json(doc))
    return path


def load_cell(
    out_dir: str | Path, bias_level: float, seed: int, cfg_hash: str
) -> CellResult | None:
    """Reload a finished sweep cell; None when absent or from another config."""
    path = cell_path(out_dir, bias_level, seed)
    if not path.exists():
        return None
    doc = _read_json(path)
    _check_envelope(doc, "experiment_cell", str(path))
    if doc.get("config_hash") != cfg_hash:
        return None
    for name in ("version", "kind", "config_hash"):
        doc.pop(name)
    cell = CellResult.from_dict(doc)
    if cell.bias_level != bias_level or cell.seed != seed:
        raise ValidationError(f"{path}: cell does not match its directory name")
    return cell
