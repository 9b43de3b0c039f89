# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

"""Command-line front end: ``kobt select | knockoff | tune | simulate``.

Exit codes: 0 success, 1 invalid arguments or configuration, 2 runtime failure.
"""

from typing import Any, Dict, List, Literal, Optional, Union
import argparse
import hashlib
import json
import logging
import os
import sys
import time

import joblib
import numpy as np
import pandas as pd
import pydantic
import scipy
import sklearn
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from kobt import __version__
from kobt.bayes_opt import tune
from kobt.boosted_tree import BoostParams
from kobt.core_data import Dataset, RngStream, clean_columns, load_csv
from kobt.errors import ConfigError, KobtError
from kobt.knockoff_filter import FilterConfig, run_kobt
from kobt.knockoff_gen import KnockoffConfig, generate_knockoffs
from kobt.report import write_json, write_report
from kobt.sim_harness import ExperimentSpec, run_experiment

logger = logging.getLogger("kobt.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2


class InputConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    path: str
    has_header: bool = True
    response_column: Union[int, str] = -1
    covariate_columns: List[Union[int, str]] = []
    task: Literal["regression", "binary_classification"] = "regression"

    @field_validator("path")
    @classmethod
    def _exists(cls, path):
        if not os.path.isfile(path):
            raise ValueError(f"file not found: {path}")
        return path


class SelectJob(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input: InputConfig
    filter: FilterConfig = FilterConfig()


class KnockoffJob(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input: InputConfig
    knockoff: KnockoffConfig = KnockoffConfig()
    master_seed: int = Field(0, ge=0, lt=2**64)


class TuneJob(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    input: InputConfig
    boost: BoostParams = BoostParams()
    n_init: int = Field(10, ge=2)
    n_iter: int = Field(20, ge=0)
    cv_folds: int = Field(10, ge=2)
    master_seed: int = Field(0, ge=0, lt=2**64)


JOBS = {"select": SelectJob, "knockoff": KnockoffJob, "tune": TuneJob, "simulate": ExperimentSpec}


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["select", "knockoff", "tune", "simulate"]
    job: Union[SelectJob, KnockoffJob, TuneJob, ExperimentSpec]
    out: str
    threads: int = Field(1, ge=1)

    @property
    def master_seed(self) -> int:
        if isinstance(self.job, SelectJob):
            return self.job.filter.master_seed
        return self.job.master_seed

    def job_dict(self) -> Dict[str, Any]:
        return self.job.model_dump(mode="json", by_alias=True)

    def config_hash(self) -> str:
        canonical = json.dumps(self.job_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def seed_type(x):
    try:
        value = int(x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{x} not an integer literal")
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"{x} not a 64-bit unsigned integer")
    return value


def positive_int(x):
    try:
        value = int(x)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{x} not an integer literal")
    if value < 1:
        raise argparse.ArgumentTypeError(f"{x} smaller than 1")
    return value


def _default_threads():
    try:
        return positive_int(os.environ.get("KOBT_THREADS", "1"))
    except argparse.ArgumentTypeError:
        return 1


def define_and_parse_args(argv: Optional[List[str]] = None):
    parser = argparse.ArgumentParser(prog="kobt", description="Knockoff boosted-tree feature selection")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="INFO with -v, DEBUG with -vv")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=seed_type, help="Master seed (overrides the config)")
    common.add_argument("--threads", type=positive_int, default=_default_threads(),
                        help="Worker processes (default: $KOBT_THREADS or 1)")
    common.add_argument("--out", "-o", type=str, required=True, help="Output directory")

    subparsers = parser.add_subparsers(dest="command", required=True)

    parser_select = subparsers.add_parser("select", parents=[common], help="Run knockoff selection on a CSV")
    parser_select.add_argument("--config", "-c", type=str, required=True, help="Job configuration (JSON)")
    parser_select.add_argument("--delta", type=float, help="Target FDR")
    parser_select.add_argument("--q", type=int, help="Number of knockoff replicates")
    parser_select.add_argument("--statistic", type=str, help="Importance statistic",
                               choices=["gain", "cover", "frequency", "shap", "saabas"])
    parser_select.add_argument("--knockoff-kind", dest="knockoff_kind", type=str,
                               choices=["shrunk_gaussian", "sparse_gaussian", "pc_permute"])

    parser_knockoff = subparsers.add_parser("knockoff", parents=[common], help="Write one knockoff matrix")
    parser_knockoff.add_argument("--config", "-c", type=str, required=True, help="Job configuration (JSON)")
    parser_knockoff.add_argument("--knockoff-kind", dest="knockoff_kind", type=str,
                                 choices=["shrunk_gaussian", "sparse_gaussian", "pc_permute"])

    parser_tune = subparsers.add_parser("tune", parents=[common], help="Tune gamma, lambda and alpha")
    parser_tune.add_argument("--config", "-c", type=str, required=True, help="Job configuration (JSON)")

    parser_simulate = subparsers.add_parser("simulate", parents=[common], help="Run a simulation experiment")
    parser_simulate.add_argument("--spec", "--config", dest="config", type=str, required=True,
                                 help="Experiment specification (JSON)")
    parser_simulate.add_argument("--reps", type=positive_int, help="Number of replicates")

    return parser.parse_args(argv)


def _set_kind(knockoff: Dict[str, Any], kind: str) -> None:
    if knockoff.get("kind", "shrunk_gaussian") != kind:
        knockoff.pop("num_pcs", None)
        knockoff.pop("sparse_threshold", None)
    knockoff["kind"] = kind


def _apply_overrides(command: str, raw: Dict[str, Any], args) -> Dict[str, Any]:
    if command == "select":
        section = raw.setdefault("filter", {})
        for name in ("delta", "q", "statistic"):
            if getattr(args, name) is not None:
                section[name] = getattr(args, name)
        if args.seed is not None:
            section["master_seed"] = args.seed
        if args.knockoff_kind is not None:
            _set_kind(section.setdefault("knockoff", {}), args.knockoff_kind)
        return raw
    if args.seed is not None:
        raw["master_seed"] = args.seed
    if command == "knockoff" and args.knockoff_kind is not None:
        _set_kind(raw.setdefault("knockoff", {}), args.knockoff_kind)
    if command == "simulate" and args.reps is not None:
        raw["reps"] = args.reps
    return raw


def load_run_config(args) -> RunConfig:
    try:
        with open(args.config, "r", encoding="utf-8") as fp:
            raw = json.load(fp)
    except OSError as err:
        raise ConfigError(f"cannot read {args.config}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"{args.config} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.config} must hold a JSON object")
    job = JOBS[args.command].model_validate(_apply_overrides(args.command, raw, args))
    return RunConfig(command=args.command, job=job, out=args.out, threads=args.threads)


def _load_dataset(source: InputConfig) -> Dataset:
    dataset = load_csv(source.path, source.has_header, source.response_column, source.covariate_columns,
                       source.task)
    x, _ = clean_columns(dataset.x)
    return dataset.with_x(x)


def execute(config: RunConfig):
    job = config.job
    if config.command == "select":
        return run_kobt(_load_dataset(job.input), job.filter, n_jobs=config.threads)
    if config.command == "knockoff":
        dataset = _load_dataset(job.input)
        return generate_knockoffs(dataset.x, job.knockoff, RngStream(job.master_seed, 0))
    if config.command == "tune":
        dataset = _load_dataset(job.input)
        return tune(dataset, job.boost, job.n_init, job.n_iter, job.cv_folds, RngStream(job.master_seed, 0),
                    n_jobs=config.threads)
    return run_experiment(job, n_jobs=config.threads)


def _versions() -> Dict[str, str]:
    return {
        "kobt": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "scikit-learn": sklearn.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
        "pydantic": pydantic.VERSION,
        "python": sys.version.split()[0],
    }


def write_manifest(config: RunConfig, outputs: List[str], wall_time: float) -> str:
    manifest = {
        "command": config.command,
        "config": config.job_dict(),
        "config_hash": config.config_hash(),
        "master_seed": config.master_seed,
        "threads": config.threads,
        "versions": _versions(),
        "wall_time_seconds": wall_time,
        "outputs": sorted(os.path.basename(path) for path in outputs),
    }
    return write_json(os.path.join(config.out, "manifest.json"), manifest)


def _validation_message(err: ValidationError) -> str:
    lines = []
    for error in err.errors():
        path = ".".join(str(part) for part in error["loc"]) or "<root>"
        lines.append(f"{path}: {error['msg']}")
    return "invalid configuration: " + "; ".join(lines)


def _configure_logging(verbose: int) -> None:
    level = logging.WARNING if verbose == 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def run_command(argv: Optional[List[str]] = None) -> int:
    try:
        args = define_and_parse_args(argv)
    except SystemExit as exit_:
        return EXIT_OK if exit_.code in (0, None) else EXIT_INVALID
    _configure_logging(args.verbose)

    try:
        config = load_run_config(args)
    except ValidationError as err:
        logger.error(_validation_message(err))
        return EXIT_INVALID
    except ConfigError as err:
        logger.error(str(err))
        return EXIT_INVALID

    start = time.perf_counter()
    try:
        result = execute(config)
        outputs = write_report(result, config.out, config.job_dict())
        write_manifest(config, outputs, time.perf_counter() - start)
    except (KobtError, OSError) as err:
        logger.error("%s failed: %s", config.command, err)
        return EXIT_RUNTIME
    for path in outputs:
        logger.info("wrote %s", path)
    return EXIT_OK


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
