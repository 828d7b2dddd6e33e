#!/usr/bin/env python
"""
Command-line entry point of cwce-lab.
Runs figure and table recipes and the individual pipeline stages (simulate, fit, cwce)
from a JSON experiment configuration, and the oracle validation suite.

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 run error (numerical or domain failure of a stage, unwritable output).
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from cwce.errors import ConfigurationError, CwceLabError, UnsupportedCombinationError, ValidationFailure
from cwce.exception_tracker import setup_exception_tracking
from cwce.oracle_suite import require_passed, run_oracle_suite
from cwce.recipes import run_recipe, stage_cwce, stage_fit, stage_simulate
from utils.artifact_store import ArtifactStore, params_hash
from utils.config import DEFAULT_LOG_DIRECTORY, Config, load_environment
from utils.experiment_models import ExperimentConfig, Recipe, load_experiment_config

logger = logging.getLogger("cwce_lab")

EXIT_OK = 0
EXIT_VALIDATION_FAILURE = 1
EXIT_CONFIGURATION_ERROR = 2
EXIT_RUN_ERROR = 3

STAGES = {
    "run": run_recipe,
    "simulate": stage_simulate,
    "fit": stage_fit,
    "cwce": stage_cwce,
}


def setup_logging(level: str, log_directory: str) -> None:
    """Log to <log_directory>/cwce_lab.log and to the console."""
    os.makedirs(log_directory, exist_ok=True)
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[
            logging.FileHandler(os.path.join(log_directory, "cwce_lab.log")),
            logging.StreamHandler(),
        ],
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cwce-lab", description="Individual causal effects in longitudinal data")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the configured recipe"),
        ("simulate", "simulate and write the panel"),
        ("fit", "fit REML and naive models on the subset grid"),
        ("cwce", "exact CWCE of every individual under the true parameters"),
        ("validate", "closed-form against Monte-Carlo oracle suite"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=name != "validate", help="experiment configuration (JSON)")
        cmd.add_argument("--out", default=None, help="output directory (overrides the config)")
        cmd.add_argument("--threads", type=int, default=None, help="worker threads (overrides CWCE_LAB_THREADS)")
        cmd.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING or ERROR")
    return parser


def execute(args: argparse.Namespace) -> int:
    """Run one subcommand; returns the process exit code."""
    env = Config(threads=args.threads)
    if args.config:
        config = load_experiment_config(args.config)
    else:
        config = ExperimentConfig(recipe=Recipe.CUSTOM)
    out = args.out or config.outputs
    store = ArtifactStore(out)
    logger.info(f"cwce-lab {args.command}: out={out} threads={env.threads} ({env.threads_source})")

    if args.command == "validate":
        report = run_oracle_suite(config.seed, config.oracle_cases, config.n_draws, env.threads)
        store.write_csv("validation/oracle_checks.csv", report.to_frame())
        store.write_manifest(config.seed, params_hash(config))
        require_passed(report)
        return EXIT_OK

    STAGES[args.command](config, store, env.threads)
    store.write_manifest(config.seed, params_hash(config.resolved_scm()), {"recipe": config.recipe.value})
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    load_environment()
    setup_logging(args.log_level, DEFAULT_LOG_DIRECTORY)
    setup_exception_tracking()
    try:
        return execute(args)
    except (ConfigurationError, UnsupportedCombinationError) as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIGURATION_ERROR
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIGURATION_ERROR
    except ValidationFailure as e:
        logger.error(f"Validation failed: {e}")
        return EXIT_VALIDATION_FAILURE
    except (CwceLabError, OSError) as e:
        logger.error(f"Run failed: {type(e).__name__}: {e}")
        return EXIT_RUN_ERROR


if __name__ == "__main__":
    sys.exit(main())
