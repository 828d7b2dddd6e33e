"""
Models for experiment configuration.
Provides the Pydantic schema of the JSON experiment file with fail-closed
validation (unknown keys are rejected).
"""
import json
import logging
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from cwce.errors import ConfigurationError
from cwce.scm_core import ScmKind, ScmParams

logger = logging.getLogger("utils.experiment_models")

SCHEMA_VERSION = 1
DEFAULT_SUBSET_GRID: Tuple[Tuple[int, int], ...] = tuple((n, m) for n in (100, 500, 1000) for m in (3, 10, 100))


class Recipe(str, Enum):
    FIG5 = "Fig5"
    FIG7 = "Fig7"
    FIG8 = "Fig8"
    FIG9 = "Fig9"
    FIG10 = "Fig10"
    FIG11 = "Fig11"
    FIG12 = "Fig12"
    FIG13 = "Fig13"
    TABLE5 = "Table5"
    BIAS_DEMO = "BiasDemo"
    CUSTOM = "Custom"


# Model kind each recipe is defined for; None accepts any kind
RECIPE_KINDS = {
    Recipe.FIG5: (ScmKind.GAUSSIAN_LMM,),
    Recipe.FIG7: (ScmKind.LOGNORMAL_LMM,),
    Recipe.FIG8: None,
    Recipe.FIG9: (ScmKind.GAUSSIAN_LMM,),
    Recipe.FIG10: (ScmKind.TRUNCATED_LMM,),
    Recipe.FIG11: (ScmKind.GAUSSIAN_LMM,),
    Recipe.FIG12: (ScmKind.LOGNORMAL_LMM,),
    Recipe.FIG13: (ScmKind.TRUNCATED_LMM,),
    Recipe.TABLE5: (ScmKind.TRUNCATED_LMM,),
    Recipe.BIAS_DEMO: (ScmKind.GAUSSIAN_LMM,),
    Recipe.CUSTOM: None,
}

DEFAULT_PRESETS = {
    ScmKind.GAUSSIAN_LMM: ScmParams.gaussian_preset,
    ScmKind.LOGNORMAL_LMM: ScmParams.lognormal_preset,
    ScmKind.TRUNCATED_LMM: ScmParams.truncated_preset,
    ScmKind.CROSSOVER: ScmParams.crossover_preset,
}


class ExperimentConfig(BaseModel):
    """Experiment configuration for one recipe run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    schema_version: Literal[1] = Field(SCHEMA_VERSION, description="Configuration schema version")
    recipe: Recipe = Field(..., description="Figure/table recipe to run")
    scm: Optional[ScmParams] = Field(None, description="Model parameters; the recipe's preset when omitted")
    n: int = Field(1000, ge=1, description="Individuals in the simulated panel")
    m: int = Field(100, ge=3, description="Repeats per individual")
    seed: int = Field(20240607, ge=0, lt=2 ** 64, description="Root seed of every random stream")
    subset_grid: List[Tuple[int, int]] = Field(
        default_factory=lambda: list(DEFAULT_SUBSET_GRID), description="(n, m) subsets to fit and evaluate"
    )
    k: int = Field(3, ge=2, description="Evaluation time")
    regime: Tuple[int, ...] = Field((1, 1), description="Exposure regime a_1..a_{k-1}")
    outputs: str = Field("outputs", description="Output directory")
    horizons: List[int] = Field(default_factory=lambda: [3, 10, 100], description="History lengths for CWCE figures")
    n_seeds: int = Field(20, ge=1, description="Replicate seeds for BiasDemo")
    n_draws: int = Field(100_000, ge=1, description="Monte-Carlo draws for the oracle suite")
    oracle_cases: int = Field(50, ge=1, description="Randomized cases per kind in the oracle suite")

    @model_validator(mode="after")
    def _check_consistency(self):
        if any(v not in (0, 1) for v in self.regime):
            raise ValueError("regime entries must be 0 or 1")
        if len(self.regime) < self.k - 1:
            raise ValueError(f"regime of length {len(self.regime)} is too short for k={self.k}")
        for n_sub, m_sub in self.subset_grid:
            if not (1 <= n_sub <= self.n and 3 <= m_sub <= self.m):
                raise ValueError(f"subset ({n_sub}, {m_sub}) exceeds the panel ({self.n}, {self.m})")
        if self.k > self.m:
            raise ValueError(f"k={self.k} exceeds m={self.m}")
        if any(h < 1 or h > self.m for h in self.horizons):
            raise ValueError(f"horizons must lie in 1..{self.m}")
        kinds = RECIPE_KINDS[self.recipe]
        if self.scm is not None and kinds is not None and self.scm.kind not in kinds:
            raise ValueError(f"recipe {self.recipe.value} needs kind {kinds[0].value}, got {self.scm.kind.value}")
        if self.scm is not None and self.scm.kind == ScmKind.CROSSOVER and self.m != 3:
            raise ValueError("crossover experiments have m = 3")
        return self

    def resolved_scm(self) -> ScmParams:
        """Model parameters, falling back to the preset for the recipe's kind."""
        if self.scm is not None:
            return self.scm
        kinds = RECIPE_KINDS[self.recipe] or (ScmKind.GAUSSIAN_LMM,)
        return DEFAULT_PRESETS[kinds[0]]()


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Read and validate an experiment configuration file.

    Args:
        path: JSON file path

    Returns:
        Validated ExperimentConfig

    Raises:
        ConfigurationError: unreadable file, malformed JSON or schema violation
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"Cannot read config {path}: {e}") from e
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config {path} is not valid JSON: {e}") from e
    try:
        config = ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigurationError(f"Config {path} failed validation:\n{e}") from e
    logger.info(f"Loaded config {path}: recipe={config.recipe.value} n={config.n} m={config.m} seed={config.seed}")
    return config
