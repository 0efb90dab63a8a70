"""Command line entry points for the benchmark toolkit.

Subcommands:

- ``generate``: sample one biased population and write its dataset files
  (contracts.csv, oracle.bin, meta.json) to the output directory.
- ``train``: fit the requested estimator families on a generated
  population, for both outcomes; write checkpoint and history files.
- ``prescribe``: write per-contract PM-frequency prescriptions for the
  configured policies over the held-out test split.
- ``evaluate``: score trained estimators and policies against the
  generator's oracle; write report.json plus the per-metric plot CSVs.
- ``sweep``: run the full (seed x bias level) matrix end to end. Cell
  results persist under cells/ keyed by config hash, seed, and bias
  level, so an interrupted sweep resumes where it stopped and finished
  cells are never recomputed.

Global flags ``--config PATH`` (JSON experiment config; defaults apply
when omitted), ``--seed INT``, ``--out DIR``, and ``--verbose`` are
accepted before or after the subcommand. The single-population commands
narrow the experiment config to the one (n, bias level, seed) cell they
touch and embed that narrowed config's hash in every file they write.
The MAINTCAUSE_THREADS environment variable caps sweep parallelism.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ExperimentConfig, config_hash
from .datagen import generate_dataset
from .domain import ValidationError
from .estimators import OUTCOME_KINDS, fit_scigan, fit_supervised
from .evaluation import (
    OracleEstimator,
    aggregate,
    fill_true_costs,
    policy_families,
    resolve_workers,
    safe_cell,
    score_estimators,
)
from .nncore import DivergenceError
from .persistence import (
    PRESCRIPTIONS_FILE,
    checkpoint_path,
    history_path,
    load_cell,
    load_dataset,
    load_estimator,
    load_oracle,
    write_cell,
    write_dataset,
    write_estimator,
    write_history,
    write_prescriptions,
    write_report,
)
from .policy import (
    POLICY_NAMES,
    prescribe_ate,
    prescribe_ite,
    prescribe_oracle,
)

__all__ = ["main", "EXIT_OK", "EXIT_CONFIG", "EXIT_DATA", "EXIT_TRAINING"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_TRAINING = 4

ESTIMATOR_CHOICES = ("mlp", "scigan", "both")


class CliError(Exception):
    """Command failure with a specific exit code."""

    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _log(args: argparse.Namespace, message: str) -> None:
    if args.verbose:
        print(message, file=sys.stderr)


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        doc = json.loads(Path(path).read_bytes())
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, f"config file {path} must hold a JSON object")
    try:
        return ExperimentConfig.from_dict(doc)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config: {exc}") from None


def _narrow(
    config: ExperimentConfig, n: int, bias_level: float, seed: int
) -> ExperimentConfig:
    """Restrict a config to a single experiment cell (for hashing)."""
    try:
        return dataclasses.replace(
            config, n=n, bias_levels=(bias_level,), seeds=(seed,)
        )
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None


def _read_dataset(data_dir: Path):
    try:
        return load_dataset(data_dir)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"missing dataset file: {exc}") from None
    except ValidationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _read_oracle(data_dir: Path):
    try:
        return load_oracle(data_dir)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, f"missing oracle file: {exc}") from None
    except ValidationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _read_estimator(path: Path):
    try:
        return load_estimator(path)
    except FileNotFoundError:
        raise CliError(
            EXIT_DATA, f"missing checkpoint {path}; run the train command first"
        ) from None
    except ValidationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None


def _out_dir(args: argparse.Namespace, default: Path) -> Path:
    return Path(args.out) if args.out is not None else default


# --- subcommands ------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    n = args.n if args.n is not None else config.n
    bias_level = args.bias_level if args.bias_level is not None else config.bias_levels[0]
    seed = args.seed if args.seed is not None else config.seeds[0]
    narrowed = _narrow(config, n, bias_level, seed)
    out = _out_dir(args, Path("."))

    _log(args, f"generating n={n} bias_level={bias_level:g} seed={seed}")
    try:
        dataset, oracle = generate_dataset(n, bias_level, seed, config.grid)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    try:
        paths = write_dataset(out, dataset, oracle, config_hash(narrowed))
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write dataset: {exc}") from None
    print(f"wrote {', '.join(p.name for p in paths.values())} to {out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data_dir = Path(args.data)
    dataset = _read_dataset(data_dir)
    seed = args.seed if args.seed is not None else dataset.metadata.seed
    narrowed = _narrow(config, dataset.metadata.n, dataset.metadata.bias_level, seed)
    cfg_hash = config_hash(narrowed)
    out = _out_dir(args, data_dir)
    families = ("mlp", "scigan") if args.estimator == "both" else (args.estimator,)

    X_tr, t_tr = dataset.feature_matrix("train"), dataset.treatments("train")
    X_va, t_va = dataset.feature_matrix("valid"), dataset.treatments("valid")
    written = 0
    try:
        out.mkdir(parents=True, exist_ok=True)
        for kind in OUTCOME_KINDS:
            train_data = (X_tr, t_tr, dataset.outcomes(kind, "train"))
            valid_data = (X_va, t_va, dataset.outcomes(kind, "valid"))
            for family in families:
                _log(args, f"fitting {family} for {kind}")
                try:
                    if family == "mlp":
                        cfg = dataclasses.replace(
                            config.supervised,
                            train=dataclasses.replace(config.supervised.train, seed=seed),
                        )
                        est = fit_supervised(train_data, valid_data, kind, cfg, config.grid)
                    else:
                        cfg = dataclasses.replace(
                            config.scigan,
                            train=dataclasses.replace(config.scigan.train, seed=seed),
                        )
                        est = fit_scigan(train_data, valid_data, kind, cfg, config.grid)
                except (DivergenceError, ValidationError) as exc:
                    raise CliError(
                        EXIT_TRAINING, f"training {family} for {kind} failed: {exc}"
                    ) from None
                write_estimator(checkpoint_path(out, family, kind), est, cfg_hash, seed)
                write_history(history_path(out, family, kind), est, cfg_hash, seed)
                written += 1
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write checkpoints: {exc}") from None
    print(f"wrote {written} checkpoint(s) with history to {out}")
    return EXIT_OK


def _policy_estimators(policy: str, data_dir: Path, oracle):
    family = policy.rsplit("-", 1)[0]
    if family == "oracle":
        return OracleEstimator(oracle, "overhauls"), OracleEstimator(oracle, "failures")
    eo = _read_estimator(checkpoint_path(data_dir, family, "overhauls"))
    ef = _read_estimator(checkpoint_path(data_dir, family, "failures"))
    return eo, ef


def cmd_prescribe(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    policies = tuple(args.policy) if args.policy else config.policies
    data_dir = Path(args.data)
    dataset = _read_dataset(data_dir)
    oracle = _read_oracle(data_dir)
    out = _out_dir(args, data_dir)
    test = dataset.subset("test")

    rows = []
    for policy in policies:
        _log(args, f"prescribing with policy {policy}")
        try:
            if policy == "oracle":
                pres = prescribe_oracle(oracle, test, config.costs, config.grid)
            else:
                eo, ef = _policy_estimators(policy, data_dir, oracle)
                maker = prescribe_ite if policy.endswith("-ite") else prescribe_ate
                pres = maker(eo, ef, test, config.costs, config.grid)
            rows.extend(fill_true_costs(pres, oracle, config.costs))
        except ValidationError as exc:
            raise CliError(EXIT_DATA, f"policy {policy} failed: {exc}") from None
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / PRESCRIPTIONS_FILE
        write_prescriptions(path, rows)
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write prescriptions: {exc}") from None
    print(f"wrote {len(rows)} prescription(s) for {len(policies)} policies to {path}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    data_dir = Path(args.data)
    dataset = _read_dataset(data_dir)
    oracle = _read_oracle(data_dir)
    narrowed = _narrow(
        config, dataset.metadata.n, dataset.metadata.bias_level, dataset.metadata.seed
    )
    out = _out_dir(args, data_dir)

    estimators = {}
    for family in policy_families(config.policies):
        if family == "oracle":
            continue
        for kind in OUTCOME_KINDS:
            estimators[f"{family}/{kind}"] = _read_estimator(
                checkpoint_path(data_dir, family, kind)
            )
    _log(args, f"scoring {len(estimators)} estimator(s) against the oracle")
    try:
        cell = score_estimators(narrowed, dataset, oracle, estimators)
        report = aggregate(narrowed, [cell])
        paths = write_report(out, report)
    except ValidationError as exc:
        raise CliError(EXIT_DATA, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write report: {exc}") from None
    print(f"wrote {', '.join(sorted(p.name for p in paths.values()))} to {out}")
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    out = _out_dir(args, Path(config.out_dir))
    cfg_hash = config_hash(config)

    finished: list = []
    remaining: list[tuple[int, float]] = []
    for seed, bias_level in config.cells():
        try:
            cell = load_cell(out, bias_level, seed, cfg_hash)
        except ValidationError as exc:
            print(f"discarding unreadable cell file: {exc}", file=sys.stderr)
            cell = None
        if cell is None:
            remaining.append((seed, bias_level))
        else:
            finished.append(cell)
    _log(args, f"{len(finished)} cell(s) already complete, {len(remaining)} to run")

    failed = 0
    fresh: list = []
    try:
        if remaining:
            workers = resolve_workers(len(remaining), args.workers)
            if workers == 1:
                results = (safe_cell(config, s, b) for s, b in remaining)
                fresh = list(_collect_cells(results, out, cfg_hash, args))
            else:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    futures = [
                        pool.submit(safe_cell, config, s, b) for s, b in remaining
                    ]
                    fresh = list(
                        _collect_cells((f.result() for f in futures), out, cfg_hash, args)
                    )
        failed = sum(1 for c in fresh if c.error is not None)
        report = aggregate(config, finished + fresh)
        write_report(out, report)
    except ValidationError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    except OSError as exc:
        raise CliError(EXIT_DATA, f"cannot write sweep outputs: {exc}") from None
    print(
        f"sweep complete: {len(finished)} cell(s) reused, {len(fresh) - failed} "
        f"computed, {failed} failed; report in {out}"
    )
    return EXIT_OK


def _collect_cells(results, out: Path, cfg_hash: str, args: argparse.Namespace):
    """Persist successful cells as they arrive; log failures and keep going."""
    for cell in results:
        if cell.error is None:
            write_cell(out, cell, cfg_hash)
            _log(args, f"cell bias={cell.bias_level:g} seed={cell.seed} done")
        else:
            print(
                f"cell bias={cell.bias_level:g} seed={cell.seed} failed: {cell.error}",
                file=sys.stderr,
            )
        yield cell


# --- parser -----------------------------------------------------------------


def _add_global_flags(parser: argparse.ArgumentParser, top: bool) -> None:
    # the same flags exist on the root parser and on every subcommand, so
    # they are accepted on either side of the subcommand name; SUPPRESS
    # keeps a subcommand's unset flags from clobbering root-level values
    default = None if top else argparse.SUPPRESS
    parser.add_argument(
        "--config",
        metavar="PATH",
        default=default,
        help="JSON experiment config; built-in defaults are used when omitted",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=default,
        help="seed for generation and training (default: config's first seed, "
        "or the dataset's own seed for commands reading one)",
    )
    parser.add_argument(
        "--out",
        metavar="DIR",
        default=default,
        help="output directory (default: current directory for generate, the "
        "--data directory for train/prescribe/evaluate, the config's "
        "out_dir for sweep)",
    )
    parser.add_argument(
        "--verbose",
        action="store_true",
        default=False if top else argparse.SUPPRESS,
        help="print progress to stderr",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maintcause",
        description="Benchmark toolkit for maintenance-contract dose-response "
        "estimation and PM-frequency prescription.",
    )
    _add_global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a population and write its files")
    _add_global_flags(p, top=False)
    p.add_argument("--n", type=int, default=None, help="population size")
    p.add_argument(
        "--lambda",
        dest="bias_level",
        type=float,
        default=None,
        help="selection-bias level (0 = randomized assignment)",
    )
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit estimators on a generated population")
    _add_global_flags(p, top=False)
    p.add_argument("--data", metavar="DIR", required=True, help="dataset directory")
    p.add_argument(
        "--estimator",
        choices=ESTIMATOR_CHOICES,
        default="both",
        help="estimator family to fit (default: both)",
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser(
        "prescribe", help="write per-contract prescriptions for the test split"
    )
    _add_global_flags(p, top=False)
    p.add_argument("--data", metavar="DIR", required=True, help="dataset directory")
    p.add_argument(
        "--policy",
        action="append",
        choices=POLICY_NAMES,
        help="policy to prescribe with; repeatable (default: config's policies)",
    )
    p.set_defaults(func=cmd_prescribe)

    p = sub.add_parser(
        "evaluate", help="score trained estimators against the generator's oracle"
    )
    _add_global_flags(p, top=False)
    p.add_argument("--data", metavar="DIR", required=True, help="dataset directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="run the full seed-by-bias-level experiment")
    _add_global_flags(p, top=False)
    p.add_argument(
        "--workers",
        type=int,
        default=None,
        help="parallel worker processes (default: cpu count, capped by "
        "MAINTCAUSE_THREADS)",
    )
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
