#!/usr/bin/env python
"""
Combined runner that reproduces every figure and table recipe with its default
configuration, one output directory per recipe.
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from cwce.exception_tracker import setup_exception_tracking
from cwce.recipes import run_recipe
from main import setup_logging
from utils.artifact_store import ArtifactStore, params_hash
from utils.config import DEFAULT_LOG_DIRECTORY, DEFAULT_OUTPUT_DIRECTORY, Config, load_environment
from utils.experiment_models import ExperimentConfig, Recipe

logger = logging.getLogger("cwce_runner")

FIGURE_RECIPES = [recipe for recipe in Recipe if recipe != Recipe.CUSTOM]


def run_all(out: str, threads: int, seed: Optional[int] = None, recipes: Optional[List[Recipe]] = None) -> None:
    """Run each recipe into <out>/<recipe> and write its manifest."""
    for recipe in recipes or FIGURE_RECIPES:
        fields = {"recipe": recipe, "outputs": os.path.join(out, recipe.value)}
        if seed is not None:
            fields["seed"] = seed
        config = ExperimentConfig(**fields)
        store = ArtifactStore(config.outputs)
        run_recipe(config, store, threads)
        store.write_manifest(config.seed, params_hash(config.resolved_scm()), {"recipe": recipe.value})


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Reproduce every figure and table recipe")
    parser.add_argument("--out", default=DEFAULT_OUTPUT_DIRECTORY)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    load_environment()
    setup_logging("INFO", DEFAULT_LOG_DIRECTORY)
    setup_exception_tracking()
    env = Config(threads=args.threads)
    logger.info(f"Running {len(FIGURE_RECIPES)} recipes into {args.out} with {env.threads} threads")
    run_all(args.out, env.threads, args.seed)
    logger.info("All recipes finished")
    sys.exit(0)
