"""
Cross-checks of the exact computations against independent oracles.

The closed-form CWCE of every mixed-model kind is compared with the
Monte-Carlo replay of the structural equations on randomized
(history, regime, k) cases; the crossover degeneracy, the unexposed-history
identity and the published effect measures are checked exactly.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np
import pandas as pd
from scipy.stats import norm

from cwce.cwce_engine import (
    History,
    cwce,
    cwce_gaussian,
    cwce_lognormal,
    cwce_lognormal_moments,
    cwce_monte_carlo,
)
from cwce.errors import ValidationFailure
from cwce.rng import STREAM_ORACLE, derive_seed, make_generator
from cwce.scm_core import (
    EffectMeasure,
    ScmKind,
    ScmParams,
    closed_form_effect,
    ice_distribution,
    simulate_panel,
    true_ice,
)

logger = logging.getLogger("cwce.oracle_suite")

MEAN_SE_TOLERANCE = 4.0
CELL_SE_TOLERANCE = 3.0
# Family-wise false-alarm rate of the randomized Monte-Carlo checks of one kind
FAMILY_ALPHA = 1e-3
CASE_PANEL_REPEATS = 12
KIND_ORDER = (ScmKind.GAUSSIAN_LMM, ScmKind.LOGNORMAL_LMM, ScmKind.TRUNCATED_LMM)


@dataclass(frozen=True)
class OracleCheck:
    name: str
    kind: str
    case: int
    expected: float
    observed: float
    tolerance: float
    # Standard-error multipliers of the Monte-Carlo checks: the nominal one and
    # the family-wise widened one actually applied to the tolerance
    nominal_z: float = math.nan
    applied_z: float = math.nan

    @property
    def passed(self) -> bool:
        return abs(self.expected - self.observed) <= self.tolerance

    @property
    def passed_at_nominal(self) -> bool:
        """Verdict under the unwidened multiplier; equals ``passed`` for exact checks."""
        if math.isnan(self.nominal_z) or math.isnan(self.applied_z):
            return self.passed
        return abs(self.expected - self.observed) <= self.tolerance * self.nominal_z / self.applied_z


@dataclass
class OracleReport:
    checks: List[OracleCheck] = field(default_factory=list)

    @property
    def failures(self) -> List[OracleCheck]:
        return [c for c in self.checks if not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_frame(self) -> pd.DataFrame:
        rows = [{**asdict(c), "passed": c.passed, "passed_at_nominal": c.passed_at_nominal} for c in self.checks]
        columns = ["name", "kind", "case", "expected", "observed", "tolerance",
                   "nominal_z", "applied_z", "passed", "passed_at_nominal"]
        return pd.DataFrame(rows, columns=columns)


def preset_for(kind: ScmKind) -> ScmParams:
    return {
        ScmKind.GAUSSIAN_LMM: ScmParams.gaussian_preset,
        ScmKind.LOGNORMAL_LMM: ScmParams.lognormal_preset,
        ScmKind.TRUNCATED_LMM: ScmParams.truncated_preset,
        ScmKind.CROSSOVER: ScmParams.crossover_preset,
    }[kind]()


def check_closed_form_measures() -> List[OracleCheck]:
    """Published ACE/CACE values at regime (1, 1), k = 3."""
    gaussian, lognormal, truncated = (preset_for(k) for k in KIND_ORDER)
    regime, k = (1, 1), 3
    cases = [
        ("ace", gaussian, EffectMeasure.ACE, None, -15.0, 1e-12),
        ("cace_c=0.5", lognormal, EffectMeasure.CACE, 0.5, -1.05, 0.005),
        ("cace_c=-0.5", lognormal, EffectMeasure.CACE, -0.5, -0.02, 0.005),
        ("ace", truncated, EffectMeasure.ACE, None, -0.38, 0.005),
        ("cace_c=0.7", truncated, EffectMeasure.CACE, 0.7, -0.58, 0.005),
        ("cace_c=-0.3", truncated, EffectMeasure.CACE, -0.3, -0.29, 0.005),
    ]
    return [
        OracleCheck(name, params.kind.value, 0, expected,
                    closed_form_effect(params, measure, regime, k, c_value), tol)
        for name, params, measure, c_value, expected, tol in cases
    ]


def check_unexposed_identity(seed: int, n_cases: int) -> List[OracleCheck]:
    """
    With independent latents and no exposure in the history, the Gaussian
    CWCE equals the population ICE law.
    """
    params = preset_for(ScmKind.GAUSSIAN_LMM)
    gen = make_generator(seed, STREAM_ORACLE, 100)
    population = ice_distribution(params, (1, 1), 3)
    checks = []
    for case in range(n_cases):
        h = int(gen.integers(3, 11))
        c = params.confounder_values[gen.integers(0, params.confounder_values.size, h)]
        y = params.mu + 30.0 * gen.standard_normal(h)
        history = History(h, np.zeros(h, dtype=int), c, y)
        law = cwce_gaussian(history, params, 3, (1, 1))
        checks.append(OracleCheck("unexposed_mean", params.kind.value, case, population.mean(), law.mean(), 1e-10))
        checks.append(OracleCheck("unexposed_var", params.kind.value, case, population.variance(), law.variance(), 1e-10))
    return checks


def check_crossover_degeneracy(seed: int, n: int = 10_000) -> List[OracleCheck]:
    """The crossover CWCE recovers U_AY = beta1 + U1 of every individual."""
    params = preset_for(ScmKind.CROSSOVER)
    panel = simulate_panel(params, n, 3, derive_seed(seed, STREAM_ORACLE, 200))
    worst = 0.0
    for ind in panel.individuals:
        law = cwce(History.from_individual(ind, params), params, 2, (1,))
        truth = true_ice(ind, params, (1,), 2)
        worst = max(worst, abs(law.mean() - truth) / max(1.0, abs(truth)))
    return [OracleCheck("crossover_max_rel_error", params.kind.value, 0, 0.0, worst, 1e-12)]


def _variance_se(samples: np.ndarray) -> float:
    centred = samples - samples.mean()
    m2 = float(np.mean(centred ** 2))
    m4 = float(np.mean(centred ** 4))
    return math.sqrt(max(m4 - m2 ** 2, 0.0) / samples.size)


def _draw_case(params: ScmParams, panel, gen: np.random.Generator, case: int):
    ind = panel.individuals[case % panel.n]
    h = int(gen.integers(3, CASE_PANEL_REPEATS - 1))
    k = int(gen.integers(2, h + 3))
    regime = gen.integers(0, 2, k - 1)
    regime[k - 2] = 1
    return History.from_individual(ind, params, h), k, tuple(int(v) for v in regime)


def family_z(nominal: float, n_checks: int, alpha: float = FAMILY_ALPHA) -> float:
    """
    Standard-error multiplier for one of ``n_checks`` simultaneous comparisons.

    Never below ``nominal``; widened to the two-sided Bonferroni quantile
    when many checks share the family-wise rate ``alpha``.
    """
    return max(nominal, float(norm.isf(alpha / (2.0 * max(n_checks, 1)))))


def _monte_carlo_case(
    params: ScmParams, history: History, k: int, regime, n_draws: int, seed: int, case: int, n_cases: int = 1
):
    kind = params.kind.value
    cell_z = family_z(CELL_SE_TOLERANCE, 3 * n_cases)
    mean_z = family_z(MEAN_SE_TOLERANCE, 2 * n_cases)
    draws = cwce_monte_carlo(history, params, k, regime, n_draws, seed)
    samples = draws.samples
    n = samples.size

    if params.kind == ScmKind.TRUNCATED_LMM:
        law = cwce(history, params, k, regime)
        empirical = draws.distribution
        checks = []
        for value in (-1, 0, 1):
            p = law.prob(value)
            tol = cell_z * math.sqrt(max(p * (1.0 - p), 1.0 / n) / n)
            checks.append(OracleCheck(f"pmf[{value}]", kind, case, p, empirical.prob(value), tol,
                                      CELL_SE_TOLERANCE, cell_z))
        return checks

    if params.kind == ScmKind.LOGNORMAL_LMM:
        mean, var = cwce_lognormal_moments(history, params, k, regime, allow_future=True)
    else:
        law = cwce(history, params, k, regime)
        mean, var = law.mean(), law.variance()
    checks = [
        OracleCheck("mean", kind, case, mean, float(samples.mean()),
                    mean_z * float(np.std(samples, ddof=1)) / math.sqrt(n), MEAN_SE_TOLERANCE, mean_z),
        OracleCheck("variance", kind, case, var, float(np.var(samples, ddof=1)),
                    mean_z * _variance_se(samples), MEAN_SE_TOLERANCE, mean_z),
    ]
    if params.kind == ScmKind.LOGNORMAL_LMM and k <= history.h:
        grid = cwce_lognormal(history, params, k, regime)
        checks.append(OracleCheck("grid_mean", kind, case, mean, grid.mean(), 0.05 * math.sqrt(var) + 1e-12))
    return checks


def check_against_monte_carlo(kind: ScmKind, seed: int, n_cases: int, n_draws: int, threads: int = 1) -> List[OracleCheck]:
    """
    Closed-form CWCE against the Monte-Carlo oracle on randomized cases.

    Histories come from a simulated panel; horizons lie in 3..10 and the
    evaluation time may run up to two steps past the horizon.
    """
    params = preset_for(kind)
    kind_index = KIND_ORDER.index(kind)
    panel = simulate_panel(params, n_cases, CASE_PANEL_REPEATS, derive_seed(seed, STREAM_ORACLE, kind_index))
    gen = make_generator(seed, STREAM_ORACLE, 10 + kind_index)
    cases = [_draw_case(params, panel, gen, case) for case in range(n_cases)]

    def run(case: int):
        history, k, regime = cases[case]
        case_seed = derive_seed(seed, STREAM_ORACLE, kind_index, case)
        return _monte_carlo_case(params, history, k, regime, n_draws, case_seed, case, n_cases)

    if threads <= 1:
        results = [run(case) for case in range(n_cases)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, range(n_cases)))
    return [check for group in results for check in group]


def run_oracle_suite(seed: int, n_cases: int = 50, n_draws: int = 100_000, threads: int = 1) -> OracleReport:
    """
    Run every oracle check.

    Args:
        seed: Root seed
        n_cases: Randomized cases per model kind
        n_draws: Monte-Carlo draws per case
        threads: Worker threads across cases

    Returns:
        OracleReport listing each comparison
    """
    report = OracleReport()
    report.checks.extend(check_closed_form_measures())
    report.checks.extend(check_unexposed_identity(seed, n_cases))
    report.checks.extend(check_crossover_degeneracy(seed))
    for kind in KIND_ORDER:
        logger.info(f"Oracle: {kind.value}, {n_cases} cases x {n_draws} draws")
        report.checks.extend(check_against_monte_carlo(kind, seed, n_cases, n_draws, threads))
    nominal_breaches = sum(not c.passed_at_nominal for c in report.checks)
    logger.info(f"Oracle suite: {len(report.checks)} checks, {len(report.failures)} failures "
                f"({nominal_breaches} outside the unwidened tolerance)")
    return report


def require_passed(report: OracleReport) -> None:
    """Raise ValidationFailure listing the failing checks."""
    if report.passed:
        return
    lines = [
        f"{c.kind} {c.name} case {c.case}: expected {c.expected:.6g}, observed {c.observed:.6g} (tol {c.tolerance:.3g})"
        for c in report.failures
    ]
    for line in lines:
        logger.error(f"Oracle breach: {line}")
    raise ValidationFailure(f"{len(lines)} oracle check(s) failed:\n" + "\n".join(lines))
