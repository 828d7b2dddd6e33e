"""
Plug-in individual causal inference.

Estimated CWCE laws are computed with REML estimates substituted for the
true hyper-parameters; the ICE is then estimated by the mode of that law.
Also provides marginal ICE densities across individuals, classification
tables for binary outcomes and a Kolmogorov-Smirnov distance between laws.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import stats

from cwce.cwce_engine import GridSpec, History, cwce
from cwce.distributions import CwceDistribution, Degenerate, Discrete, Gaussian, Grid
from cwce.errors import DomainError, NonConvergedFitError, UnsupportedCombinationError
from cwce.reml_fit import RemlFit
from cwce.scm_core import Panel, RegimeLike, ScmKind, ScmParams, true_ice

logger = logging.getLogger("cwce.inference")

CATEGORIES = (-1, 0, 1)


class DensityMode(str, Enum):
    AVERAGE_DENSITY = "AverageDensity"
    KERNEL_OF_EXPECTATIONS = "KernelOfExpectations"


@dataclass(frozen=True)
class IceEstimate:
    point: float
    cwce: CwceDistribution
    expected_cwce: float


@dataclass(frozen=True)
class ClassificationTable:
    """Proportions of individuals by true ICE (rows) and estimated ICE (columns), both over -1, 0, +1."""

    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=float)
        if matrix.shape != (3, 3) or np.any(matrix < 0) or abs(matrix.sum() - 1.0) > 1e-12:
            raise DomainError("Classification table must be a 3x3 table of proportions")
        object.__setattr__(self, "matrix", matrix)

    def misclassification(self) -> float:
        return float(1.0 - np.trace(self.matrix))

    def row_normalized(self) -> np.ndarray:
        totals = self.matrix.sum(axis=1, keepdims=True)
        return np.divide(self.matrix, totals, out=np.zeros_like(self.matrix), where=totals > 0)


def estimate_cwce(
    fit: RemlFit,
    history: History,
    k: int,
    regime: RegimeLike,
    template: ScmParams,
    grid_spec: Optional[GridSpec] = None,
    allow_future: bool = False,
) -> CwceDistribution:
    """
    CWCE with the fitted hyper-parameters plugged in.

    Args:
        fit: Converged REML fit
        history: Observed record
        k: Time index
        regime: Exposure regime
        template: Parameter set giving the model kind (and the threshold)
        grid_spec: Grid layout for numeric laws
        allow_future: Permit k > h for the log-normal kind

    Raises:
        NonConvergedFitError: if the fit did not converge
    """
    if not fit.converged:
        raise NonConvergedFitError(
            f"Refusing plug-in inference from a non-converged fit (gradient norm {fit.gradient_norm:.3e})"
        )
    params = fit.to_params(template)
    return cwce(history, params, k, regime, grid_spec, allow_future)


def map_ice(distribution: CwceDistribution) -> float:
    """Mode of a CWCE law; ties in a pmf go to 0."""
    return float(distribution.mode())


def expected_cwce(distribution: CwceDistribution) -> float:
    return float(distribution.mean())


def estimate_ice(
    fit: RemlFit,
    history: History,
    k: int,
    regime: RegimeLike,
    template: ScmParams,
    grid_spec: Optional[GridSpec] = None,
) -> IceEstimate:
    law = estimate_cwce(fit, history, k, regime, template, grid_spec)
    return IceEstimate(point=map_ice(law), cwce=law, expected_cwce=expected_cwce(law))


def bandwidth_nrd0(values: Sequence[float]) -> float:
    """
    Rule-of-thumb Gaussian kernel bandwidth 0.9 * min(sd, IQR/1.34) * n^(-1/5).

    Falls back to the sd, then to |x_1|, then to 1 when the spread is zero.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 2:
        raise DomainError("Bandwidth selection needs at least two values")
    hi = float(np.std(x, ddof=1))
    iqr = float(np.subtract(*np.percentile(x, [75, 25])))
    lo = min(hi, iqr / 1.34)
    if not lo:
        lo = hi or abs(float(x[0])) or 1.0
    return 0.9 * lo * x.size ** (-0.2)


def _support(distribution: CwceDistribution, width_sd: float = 8.0):
    if isinstance(distribution, Gaussian):
        return distribution.mean() - width_sd * distribution.sd, distribution.mean() + width_sd * distribution.sd
    if isinstance(distribution, Grid):
        return float(distribution.points[0]), float(distribution.points[-1])
    if isinstance(distribution, Discrete):
        return -1.0, 1.0
    return distribution.mean(), distribution.mean()


def marginal_ice_density(
    cwces: Sequence[CwceDistribution],
    mode: Union[DensityMode, str],
    bandwidth: Optional[float] = None,
    n_points: int = 2048,
) -> Grid:
    """
    Population ICE density built from individual CWCE laws.

    AverageDensity averages the individual densities on a common grid;
    KernelOfExpectations smooths the individual CWCE means with a Gaussian
    kernel (bandwidth from ``bandwidth_nrd0`` unless given) over a grid
    extending three bandwidths past the data.

    Args:
        cwces: At least two CWCE laws
        mode: Construction mode
        bandwidth: Kernel bandwidth (kernel mode only)
        n_points: Grid size

    Returns:
        Normalized Grid density
    """
    mode = DensityMode(mode)
    if len(cwces) < 2:
        raise DomainError("Marginal ICE density needs at least two individuals")

    if mode == DensityMode.AVERAGE_DENSITY:
        if not all(isinstance(d, (Gaussian, Grid)) for d in cwces):
            kinds = sorted({d.kind for d in cwces})
            raise UnsupportedCombinationError(f"AverageDensity needs Gaussian or Grid laws, got {kinds}")
        if any(isinstance(d, Gaussian) and d.var == 0 for d in cwces):
            raise UnsupportedCombinationError("AverageDensity cannot average zero-variance laws")
        bounds = np.array([_support(d) for d in cwces])
        points = np.linspace(bounds[:, 0].min(), bounds[:, 1].max(), n_points)
        density = np.zeros(n_points)
        for law in cwces:
            density += law.pdf(points)
        return Grid.normalized(points, density / len(cwces))

    means = np.array([expected_cwce(d) for d in cwces])
    bw = bandwidth_nrd0(means) if bandwidth is None else float(bandwidth)
    if not bw > 0:
        raise DomainError(f"Bandwidth must be positive, got {bw}")
    points = np.linspace(means.min() - 3.0 * bw, means.max() + 3.0 * bw, n_points)
    density = stats.norm.pdf((points[:, None] - means[None, :]) / bw).mean(axis=1) / bw
    return Grid.normalized(points, density)


def classification_table(
    panel: Panel,
    fit: RemlFit,
    k: int,
    regime: RegimeLike,
    h: Optional[int] = None,
    threads: int = 1,
) -> ClassificationTable:
    """
    Cross-tabulate true binary ICEs against their plug-in MAP estimates.

    Args:
        panel: Thresholded-kind panel with ground truth
        fit: REML fit of the continuous outcome
        k: Evaluation time
        regime: Exposure regime
        h: History horizon used for estimation (defaults to all repeats)
        threads: Worker threads for the per-individual estimates
    """
    params = panel.params
    if params.kind != ScmKind.TRUNCATED_LMM:
        raise UnsupportedCombinationError(f"Classification tables need the TruncatedLmm kind, got {params.kind.value}")
    h = panel.m if h is None else h

    def classify(index: int):
        ind = panel.individuals[index]
        truth = int(round(true_ice(ind, params, regime, k)))
        history = History.from_individual(ind, params, h)
        estimate = int(map_ice(estimate_cwce(fit, history, k, regime, params)))
        return truth, estimate

    if threads <= 1:
        pairs = [classify(i) for i in range(panel.n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pairs = list(pool.map(classify, range(panel.n)))

    counts = np.zeros((3, 3))
    for truth, estimate in pairs:
        counts[CATEGORIES.index(truth), CATEGORIES.index(estimate)] += 1
    table = ClassificationTable(counts / counts.sum())
    logger.info(f"Classification n={panel.n} m={panel.m}: misclassification={table.misclassification():.4f}")
    return table


def ks_distance(first: CwceDistribution, second: CwceDistribution, n_points: int = 4096) -> float:
    """Kolmogorov-Smirnov distance sup_x |F_1(x) - F_2(x)| between two CWCE laws."""
    lows, highs = zip(_support(first), _support(second))
    lo, hi = min(lows), max(highs)
    span = max(hi - lo, 1.0)
    candidates: List[np.ndarray] = [np.linspace(lo - 1e-3 * span, hi + 1e-3 * span, n_points)]
    for law in (first, second):
        if isinstance(law, Discrete):
            atoms = law.support
        elif isinstance(law, Degenerate):
            atoms = np.array([law.value])
        elif isinstance(law, Grid):
            atoms = law.points
        else:
            continue
        eps = 1e-9 * max(1.0, float(np.max(np.abs(atoms))))
        candidates.extend([atoms, atoms - eps])
    x = np.unique(np.concatenate(candidates))
    return float(np.max(np.abs(first.cdf(x) - second.cdf(x))))
