"""
Cross-world causal effect (CWCE) engine.

Given an individual's observed history (exposures, confounders, outcomes up
to time h), computes the law of the individual causal effect at time k:
closed form for the Gaussian model, numeric integration for the log-normal
model, bivariate rectangle probabilities for the thresholded model and a
point mass for the crossover design. A Monte-Carlo sampler of the same law
serves as the reference for all of them.

Both potential outcomes are affine in the latent vector U (and, past the
observed horizon, in the fresh residual N_k), which is what every path
below is built on.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from cwce.distributions import CwceDistribution, Degenerate, Discrete, Gaussian, Grid
from cwce.errors import DimensionError, DomainError, UnsupportedCombinationError, UnsupportedQueryError
from cwce.gauss_kit import (
    MvnDist,
    build_marginal_moments,
    condition_gaussian,
    gauss_hermite_nodes,
    bvn_rect_prob,
    psd_factor,
    std_normal_cdf,
)
from cwce.rng import block_generator
from cwce.scm_core import Individual, RegimeLike, ScmKind, ScmParams, as_regime

logger = logging.getLogger("cwce.cwce_engine")

MC_BLOCK_SIZE = 8192
MC_HISTOGRAM_BINS = 256


@dataclass(frozen=True)
class History:
    """
    Observed record of one individual up to time h (no latents).

    ``y`` is on the observed scale: Z for the log-normal kind, the
    continuous outcome for the thresholded kind, NaN where unmeasured.
    """

    h: int
    a: np.ndarray
    c: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=int).reshape(-1)
        c = np.asarray(self.c, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if not (a.size == c.size == y.size == self.h):
            raise DimensionError(f"History arrays must all have length h={self.h}")
        if np.any((a != 0) & (a != 1)):
            raise DomainError("History exposures must be 0 or 1")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls) -> "History":
        return cls(0, np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_individual(cls, ind: Individual, params: ScmParams, h: Optional[int] = None) -> "History":
        """Observed part of a simulated individual up to time ``h`` (default: all)."""
        h = ind.m if h is None else h
        if not 0 <= h <= ind.m:
            raise DimensionError(f"History horizon {h} outside 0..{ind.m}")
        y = np.array(ind.y[:h], dtype=float)
        if params.kind == ScmKind.CROSSOVER and h >= 1:
            y[0] = np.nan
        return cls(h, ind.a[:h], ind.c[:h], y)

    def linear_outcomes(self, params: ScmParams) -> np.ndarray:
        """Outcomes on the scale where the model is Gaussian."""
        if params.kind == ScmKind.LOGNORMAL_LMM:
            if np.any(self.y <= 0):
                raise DomainError("Log-normal outcomes must be strictly positive")
            return np.log(self.y)
        return self.y

    def truncate(self, h: int) -> "History":
        if not 0 <= h <= self.h:
            raise DimensionError(f"Cannot truncate history of length {self.h} to {h}")
        return History(h, self.a[:h], self.c[:h], self.y[:h])


@dataclass(frozen=True)
class CrossWorldJoint:
    """Joint pmf of (D_k^a, D_k^0); ``pmf[i, j]`` = P(D^a = i, D^0 = j)."""

    pmf: np.ndarray

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=float)
        if pmf.shape != (2, 2) or np.any(pmf < 0) or abs(pmf.sum() - 1.0) > 1e-12:
            raise DomainError(f"Invalid cross-world pmf {pmf.tolist()}")
        object.__setattr__(self, "pmf", pmf)


@dataclass(frozen=True)
class GridSpec:
    """Layout of the grid a numeric CWCE density is tabulated on."""

    n_points: int = 512
    width_sd: float = 8.0
    coarse_nodes: int = 64
    fine_nodes: int = 4096

    def __post_init__(self):
        if self.n_points < 8 or self.width_sd <= 0 or self.coarse_nodes < 2 or self.fine_nodes < 2:
            raise DomainError(f"Invalid grid specification {self}")


@dataclass(frozen=True)
class MonteCarloCwce:
    samples: np.ndarray
    distribution: CwceDistribution
    seed: int = 0
    n_blocks: int = field(default=0)

    def standard_error(self) -> float:
        return float(np.std(self.samples, ddof=1) / math.sqrt(self.samples.size)) if self.samples.size > 1 else 0.0


def _check_kind(params: ScmParams, *kinds: ScmKind) -> None:
    if params.kind not in kinds:
        names = ", ".join(k.value for k in kinds)
        raise UnsupportedCombinationError(f"Operation requires kind {names}, got {params.kind.value}")


def latent_posterior(history: History, params: ScmParams) -> MvnDist:
    """Law of (U0, U1, U2) given the observed history (the prior when h = 0)."""
    prior = MvnDist(np.zeros(3), params.latent_cov)
    if history.h == 0:
        return prior
    joint = build_marginal_moments(params, history.a, history.c)
    y = history.linear_outcomes(params)
    observed = np.flatnonzero(~np.isnan(y))
    if observed.size == 0:
        return prior
    posterior = condition_gaussian(joint, 3 + observed, y[observed])
    logger.debug(f"Latent posterior at h={history.h}: mean={posterior.mean.tolist()}")
    return posterior


def _lags(a: Sequence[int], k: int) -> Tuple[int, int]:
    lag1 = int(a[k - 2]) if k >= 2 else 0
    lag2 = int(a[k - 3]) if k >= 3 else 0
    return lag1, lag2


def _exposure_row(params: ScmParams, lag1: int, lag2: int) -> np.ndarray:
    return np.array([1.0, lag1, lag2 if params.has_lag2 else 0.0])


def _exposure_mean(params: ScmParams, lag1: int, lag2: int) -> float:
    return lag1 * params.beta1 + (lag2 * params.beta2 if params.has_lag2 else 0.0)


def confounder_branches(history: History, params: ScmParams, k: int) -> List[Tuple[float, float]]:
    """
    Values of C_{k-1} consistent with the history, with their weights.

    Observed confounders give a single branch; a confounder past the
    horizon is mixed over the confounder law.
    """
    if k <= 1:
        return [(0.0, 1.0)]
    if k - 1 <= history.h:
        return [(float(history.c[k - 2]), 1.0)]
    return [(float(v), float(p)) for v, p in params.confounder_law if p > 0]


def cross_world_gaussian(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    c_prev: Optional[float] = None,
    posterior: Optional[MvnDist] = None,
) -> MvnDist:
    """
    Bivariate Gaussian law of the linear-scale pair (Y_k^a, Y_k^0) given the history.

    For k <= h the residual N_k is pinned by the observed outcome; past the
    horizon it is a fresh N(0, sigma^2) coordinate.

    Args:
        history: Observed record
        params: Model parameters
        k: Time index
        regime: Exposure regime a
        c_prev: Confounder C_{k-1} when k - 1 > h (ignored otherwise)
        posterior: Precomputed latent posterior

    Returns:
        MvnDist over (Y^a, Y^0)
    """
    regime = as_regime(regime)
    if k < 1:
        raise DimensionError(f"Time index must be >= 1, got {k}")
    b1, b2 = regime.lags(k)
    posterior = latent_posterior(history, params) if posterior is None else posterior
    z_a = _exposure_row(params, b1, b2)
    z_0 = _exposure_row(params, 0, 0)

    if k <= history.h:
        y_lin = history.linear_outcomes(params)[k - 1]
        if np.isnan(y_lin):
            raise UnsupportedQueryError(f"Outcome at time {k} is unobserved")
        f1, f2 = _lags(history.a, k)
        z_f = _exposure_row(params, f1, f2)
        mean_f = _exposure_mean(params, f1, f2)
        offsets = np.array([
            y_lin + _exposure_mean(params, b1, b2) - mean_f,
            y_lin - mean_f,
        ])
        coef = np.vstack([z_a - z_f, z_0 - z_f])
        return posterior.affine(coef, offsets)

    if c_prev is None:
        branches = confounder_branches(history, params, k)
        if len(branches) != 1:
            raise UnsupportedQueryError("Confounder C_{k-1} is unobserved; pass c_prev")
        c_prev = branches[0][0]
    base = params.mu + (params.beta_c * c_prev if k >= 2 else 0.0)
    w = MvnDist(
        np.concatenate([posterior.mean, [0.0]]),
        np.block([
            [posterior.cov, np.zeros((3, 1))],
            [np.zeros((1, 3)), np.array([[params.sigma ** 2]])],
        ]),
    )
    offsets = np.array([base + _exposure_mean(params, b1, b2), base])
    coef = np.vstack([np.append(z_a, 1.0), np.append(z_0, 1.0)])
    return w.affine(coef, offsets)


def cwce_gaussian(history: History, params: ScmParams, k: int, regime: RegimeLike) -> CwceDistribution:
    """
    Exact CWCE of the Gaussian linear mixed model.

    The ICE is a.beta + x.U with x = (0, a_{k-1}, a_{k-2}), so the CWCE is
    Gaussian with moments taken from the latent posterior.
    """
    _check_kind(params, ScmKind.GAUSSIAN_LMM)
    if k < 2:
        raise DomainError(f"CWCE needs k >= 2 (no exposure precedes time 1), got k={k}")
    regime = as_regime(regime)
    lag1, lag2 = regime.lags(k)
    if lag1 == 0 and lag2 == 0:
        return Degenerate(0.0)
    posterior = latent_posterior(history, params)
    x = np.array([0.0, lag1, lag2])
    mean = _exposure_mean(params, lag1, lag2) + float(x @ posterior.mean)
    var = max(0.0, float(x @ posterior.cov @ x))
    if var == 0.0:
        return Degenerate(mean)
    return Gaussian(mean, var)


def _sd_pair(pair: MvnDist) -> Tuple[float, float, float, float, float]:
    """Moments of (S, D) = (Y^0, Y^a - Y^0) from the pair (Y^a, Y^0)."""
    m_a, m_0 = pair.mean
    v_a, v_0 = pair.cov[0, 0], pair.cov[1, 1]
    c_a0 = pair.cov[0, 1]
    m_d = m_a - m_0
    v_d = max(0.0, v_a + v_0 - 2.0 * c_a0)
    c_sd = c_a0 - v_0
    return m_0, max(0.0, v_0), m_d, v_d, c_sd


def cwce_lognormal_moments(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    allow_future: bool = False,
) -> Tuple[float, float]:
    """
    Exact mean and variance of the log-normal CWCE.

    Uses E[exp(X)] = exp(m + v/2) for the Gaussian linear-scale outcomes.

    Returns:
        Tuple (mean, variance)
    """
    _check_kind(params, ScmKind.LOGNORMAL_LMM)
    _check_horizon(history, k, allow_future)
    posterior = latent_posterior(history, params)
    first = second = 0.0
    for c_prev, weight in confounder_branches(history, params, k):
        pair = cross_world_gaussian(history, params, k, regime, c_prev, posterior)
        m_a, m_0 = pair.mean
        v_a, v_0, c_a0 = pair.cov[0, 0], pair.cov[1, 1], pair.cov[0, 1]
        mean = math.exp(m_a + v_a / 2.0) - math.exp(m_0 + v_0 / 2.0)
        raw2 = (
            math.exp(2.0 * m_a + 2.0 * v_a)
            - 2.0 * math.exp(m_a + m_0 + (v_a + v_0 + 2.0 * c_a0) / 2.0)
            + math.exp(2.0 * m_0 + 2.0 * v_0)
        )
        first += weight * mean
        second += weight * raw2
    return first, max(0.0, second - first ** 2)


def _check_horizon(history: History, k: int, allow_future: bool) -> None:
    if k < 1:
        raise DimensionError(f"Time index must be >= 1, got {k}")
    if k > history.h and not allow_future:
        raise UnsupportedQueryError(
            f"Log-normal CWCE at k={k} beyond the history (h={history.h}) needs allow_future=True"
        )


def _scaled_cdf(x: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Phi(x / s) with the step-function limit where s = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        out = std_normal_cdf(np.where(s > 0, x / np.where(s > 0, s, 1.0), 0.0))
    return np.where(s > 0, out, (x >= 0).astype(float))


def _product_cdf(edges: np.ndarray, v: np.ndarray, m: np.ndarray, s: float) -> np.ndarray:
    """
    P(v * exp(S) <= t) for S ~ N(m, s^2), per node (rows) and edge (columns).
    """
    t = edges[None, :]
    v = v[:, None]
    m = m[:, None]
    s_arr = np.full_like(m, s)
    abs_t = np.abs(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(abs_t) - np.log(np.abs(v))
    pos = _scaled_cdf(log_ratio - m, s_arr)
    neg = _scaled_cdf(m - log_ratio, s_arr)
    out = np.where(
        v > 0,
        np.where(t > 0, pos, 0.0),
        np.where(v < 0, np.where(t >= 0, 1.0, neg), (t >= 0).astype(float)),
    )
    return out


def _branch_cell_mass(pair: MvnDist, edges: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Probability the ICE exp(S)(exp(D) - 1) falls in each grid cell."""
    m_s, v_s, m_d, v_d, c_sd = _sd_pair(pair)
    sd_d = math.sqrt(v_d)
    if sd_d > 0:
        s_cond = math.sqrt(max(0.0, v_s - c_sd ** 2 / v_d))
        if s_cond >= 0.5 * sd_d:
            z, w = gauss_hermite_nodes(spec.coarse_nodes)
        else:
            # Narrow conditional laws need dense nodes along D; midpoint quantile rule
            probs = (np.arange(spec.fine_nodes) + 0.5) / spec.fine_nodes
            z = norm.ppf(probs)
            w = np.full(spec.fine_nodes, 1.0 / spec.fine_nodes)
        d = m_d + sd_d * z
        m_cond = m_s + (c_sd / v_d) * (d - m_d)
    else:
        s_cond = math.sqrt(v_s)
        d = np.array([m_d])
        m_cond = np.array([m_s])
        w = np.array([1.0])
    cdf = _product_cdf(edges, np.expm1(d), m_cond, s_cond)
    return w @ np.diff(cdf, axis=1)


def cwce_lognormal(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    grid_spec: Optional[GridSpec] = None,
    allow_future: bool = False,
) -> CwceDistribution:
    """
    CWCE of the log-normal model as a density on a grid.

    The ICE is exp(S)(exp(D) - 1) with (S, D) = (Y^0, Y^a - Y^0) jointly
    Gaussian on the log scale. Cell probabilities are obtained by
    integrating the conditional law of S over D with a quadrature rule,
    then converted to a density and renormalized.

    Args:
        history: Observed record (outcomes are Z = exp(Y))
        params: Log-scale model parameters
        k: Time index
        regime: Exposure regime
        grid_spec: Grid layout (defaults to 512 points over mean +/- 8 sd)
        allow_future: Permit k > h by integrating the unrealized residual

    Returns:
        Grid density, or Degenerate when the ICE is a.s. constant
    """
    _check_kind(params, ScmKind.LOGNORMAL_LMM)
    _check_horizon(history, k, allow_future)
    regime = as_regime(regime)
    lag1, lag2 = regime.lags(k)
    if lag1 == 0 and lag2 == 0:
        return Degenerate(0.0)
    spec = grid_spec or GridSpec()
    mean, var = cwce_lognormal_moments(history, params, k, regime, allow_future)
    sd = math.sqrt(var)
    if sd <= 1e-12 * max(1.0, abs(mean)):
        return Degenerate(mean)

    points = np.linspace(mean - spec.width_sd * sd, mean + spec.width_sd * sd, spec.n_points)
    step = points[1] - points[0]
    edges = np.concatenate([[points[0] - step / 2.0], points + step / 2.0])

    posterior = latent_posterior(history, params)
    mass = np.zeros(spec.n_points)
    for c_prev, weight in confounder_branches(history, params, k):
        pair = cross_world_gaussian(history, params, k, regime, c_prev, posterior)
        mass += weight * _branch_cell_mass(pair, edges, spec)
    captured = float(mass.sum())
    if captured < 0.99:
        logger.warning(f"Log-normal CWCE grid captured only {captured:.4f} of the mass")
    return Grid.normalized(points, mass / step)


def cross_world_joint_truncated(history: History, params: ScmParams, k: int, regime: RegimeLike) -> CrossWorldJoint:
    """
    Joint pmf of the two threshold indicators (D_k^a, D_k^0) given the history.

    Each cell is a bivariate-normal rectangle probability of the linear-scale
    pair (Y^a, Y^0) around the threshold.
    """
    _check_kind(params, ScmKind.TRUNCATED_LMM)
    posterior = latent_posterior(history, params)
    inf = math.inf
    bounds = {0: (-inf, params.delta), 1: (params.delta, inf)}
    pmf = np.zeros((2, 2))
    for c_prev, weight in confounder_branches(history, params, k):
        pair = cross_world_gaussian(history, params, k, regime, c_prev, posterior)
        for i in (0, 1):
            for j in (0, 1):
                lower = [bounds[i][0], bounds[j][0]]
                upper = [bounds[i][1], bounds[j][1]]
                pmf[i, j] += weight * bvn_rect_prob(pair.mean, pair.cov, lower, upper)
    pmf = np.clip(pmf, 0.0, None)
    pmf = pmf / pmf.sum()
    pmf[np.unravel_index(np.argmax(pmf), pmf.shape)] += 1.0 - pmf.sum()
    return CrossWorldJoint(pmf)


def cwce_truncated(history: History, params: ScmParams, k: int, regime: RegimeLike) -> Discrete:
    """pmf of D_k^a - D_k^0 on {-1, 0, +1}."""
    joint = cross_world_joint_truncated(history, params, k, regime).pmf
    return Discrete.normalized(
        p_minus1=joint[0, 1],
        p_0=joint[0, 0] + joint[1, 1],
        p_plus1=joint[1, 0],
    )


def cwce_crossover(y2: float, y3: float, a1: int) -> Degenerate:
    """
    Point-mass CWCE of the crossover design.

    The exposed period minus the unexposed one reveals U_AY exactly.
    """
    if int(a1) not in (0, 1):
        raise DomainError(f"a1 must be 0 or 1, got {a1}")
    return Degenerate(float(y2 - y3) if int(a1) == 1 else float(y3 - y2))


def cwce(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    grid_spec: Optional[GridSpec] = None,
    allow_future: bool = False,
) -> CwceDistribution:
    """Exact CWCE for any model kind."""
    if params.kind == ScmKind.GAUSSIAN_LMM:
        return cwce_gaussian(history, params, k, regime)
    if params.kind == ScmKind.LOGNORMAL_LMM:
        return cwce_lognormal(history, params, k, regime, grid_spec, allow_future)
    if params.kind == ScmKind.TRUNCATED_LMM:
        return cwce_truncated(history, params, k, regime)
    return _crossover_query(history, k, regime)


def _crossover_query(history: History, k: int, regime: RegimeLike) -> Degenerate:
    """
    Crossover CWCE of Y_k under ``regime``.

    Both periods carry the single effect U_AY of the previous exposure, so
    only k in {2, 3} is defined; the effect is U_AY when a_{k-1} = 1 and 0
    otherwise.
    """
    if k not in (2, 3):
        raise UnsupportedQueryError(f"Crossover outcomes follow an exposure only at times 2 and 3, got k={k}")
    lag1, _ = as_regime(regime).lags(k)
    if history.h < 3:
        raise DimensionError("Crossover CWCE needs the outcomes of both periods (h >= 3)")
    if lag1 == 0:
        return Degenerate(0.0)
    return cwce_crossover(history.y[1], history.y[2], history.a[0])


def cwce_monte_carlo(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    n_draws: int,
    seed: int,
    block_size: int = MC_BLOCK_SIZE,
) -> MonteCarloCwce:
    """
    Sample the CWCE by replaying the structural equations.

    Latents are drawn from their posterior; for k <= h the residual N_k is
    recovered from the observed outcome, otherwise it is drawn fresh (and an
    unobserved confounder is drawn from its law). Draws come in fixed-size
    blocks, each from its own stream, so the result depends only on
    (seed, n_draws, block_size).

    Args:
        history: Observed record
        params: Model parameters (any kind except Crossover)
        k: Time index
        regime: Exposure regime
        n_draws: Number of draws (>= 1)
        seed: Root seed
        block_size: Draws per block

    Returns:
        MonteCarloCwce with the raw ICE samples and a summarizing distribution
    """
    if params.kind == ScmKind.CROSSOVER:
        raise UnsupportedCombinationError("Crossover CWCE is degenerate; use cwce_crossover")
    if n_draws < 1:
        raise DomainError(f"n_draws must be >= 1, got {n_draws}")
    if k < 1:
        raise DimensionError(f"Time index must be >= 1, got {k}")
    regime = as_regime(regime)
    b1, b2 = regime.lags(k)
    posterior = latent_posterior(history, params)
    factor = psd_factor(posterior.cov)

    observed = k <= history.h
    if observed:
        y_lin = history.linear_outcomes(params)[k - 1]
        if np.isnan(y_lin):
            raise UnsupportedQueryError(f"Outcome at time {k} is unobserved")
        f1, f2 = _lags(history.a, k)
        c_known = float(history.c[k - 2]) if k >= 2 else 0.0
    branches = confounder_branches(history, params, k)
    values = np.array([v for v, _ in branches])
    cum = np.cumsum([p for _, p in branches])

    n_blocks = -(-n_draws // block_size)
    samples = np.empty(n_draws)
    for block in range(n_blocks):
        start = block * block_size
        size = min(block_size, n_draws - start)
        gen = block_generator(seed, block)
        u = posterior.mean + gen.standard_normal((size, 3)) @ factor.T
        if observed:
            c_prev = np.full(size, c_known)
            fitted = (
                params.mu + u[:, 0]
                + (params.beta_c * c_prev if k >= 2 else 0.0)
                + f1 * (params.beta1 + u[:, 1])
                + (f2 * (params.beta2 + u[:, 2]) if params.has_lag2 else 0.0)
            )
            noise = y_lin - fitted
        else:
            noise = params.sigma * gen.standard_normal(size)
            idx = np.minimum(np.searchsorted(cum, gen.random(size), side="right"), cum.size - 1)
            c_prev = values[idx]

        def replay(lag1: int, lag2: int) -> np.ndarray:
            value = params.mu + u[:, 0]
            if k >= 2:
                value = value + params.beta_c * c_prev + lag1 * (params.beta1 + u[:, 1])
            if k >= 3 and params.has_lag2:
                value = value + lag2 * (params.beta2 + u[:, 2])
            return value + noise

        y_a = replay(b1, b2)
        y_0 = replay(0, 0)
        if params.kind == ScmKind.LOGNORMAL_LMM:
            samples[start:start + size] = np.exp(y_a) - np.exp(y_0)
        elif params.kind == ScmKind.TRUNCATED_LMM:
            samples[start:start + size] = (y_a > params.delta).astype(float) - (y_0 > params.delta).astype(float)
        else:
            samples[start:start + size] = y_a - y_0

    logger.debug(f"Monte-Carlo CWCE: {n_draws} draws in {n_blocks} blocks, seed={seed}")
    return MonteCarloCwce(samples, summarize_samples(samples, params.kind), seed, n_blocks)


def summarize_samples(samples: np.ndarray, kind: ScmKind, bins: int = MC_HISTOGRAM_BINS) -> CwceDistribution:
    """Empirical law of ICE draws: pmf for indicators, histogram density otherwise."""
    samples = np.asarray(samples, dtype=float)
    if kind == ScmKind.TRUNCATED_LMM:
        n = samples.size
        return Discrete.normalized(
            p_minus1=np.count_nonzero(samples == -1.0) / n,
            p_0=np.count_nonzero(samples == 0.0) / n,
            p_plus1=np.count_nonzero(samples == 1.0) / n,
        )
    lo, hi = float(samples.min()), float(samples.max())
    if hi - lo <= 1e-12 * max(1.0, abs(lo)):
        return Degenerate(float(samples.mean()))
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    centres = 0.5 * (edges[:-1] + edges[1:])
    return Grid.normalized(centres, counts / (samples.size * (edges[1] - edges[0])))


def _lognormal_pdf(x: np.ndarray, m: float, s: float) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-0.5 * ((np.log(x[pos]) - m) / s) ** 2) / (x[pos] * s * math.sqrt(2.0 * math.pi))
    return out


def predict_potential_outcome(
    history: History,
    params: ScmParams,
    k: int,
    regime: RegimeLike,
    grid_spec: Optional[GridSpec] = None,
) -> CwceDistribution:
    """
    Law of the potential outcome Y_k^a (observed scale) given the history.

    Gaussian for the Gaussian kind, a log-normal density on a grid for the
    log-normal kind, and for the thresholded kind a pmf placing P(D^a = 1)
    on +1 and P(D^a = 0) on 0. An unobserved confounder turns the law into
    a mixture, tabulated on a grid.
    """
    if params.kind == ScmKind.CROSSOVER:
        raise UnsupportedCombinationError("Potential-outcome prediction is not defined for the crossover kind")
    spec = grid_spec or GridSpec()
    posterior = latent_posterior(history, params)
    branches = confounder_branches(history, params, k)
    marginals = []
    for c_prev, weight in branches:
        pair = cross_world_gaussian(history, params, k, regime, c_prev, posterior)
        marginals.append((float(pair.mean[0]), max(0.0, float(pair.cov[0, 0])), weight))

    if params.kind == ScmKind.TRUNCATED_LMM:
        p_one = 0.0
        for m, v, weight in marginals:
            p_one += weight * (float(m > params.delta) if v == 0 else float(std_normal_cdf((m - params.delta) / math.sqrt(v))))
        return Discrete.normalized(0.0, 1.0 - p_one, p_one)

    if params.kind == ScmKind.GAUSSIAN_LMM and len(marginals) == 1:
        m, v, _ = marginals[0]
        return Gaussian(m, v) if v > 0 else Degenerate(m)

    if params.kind == ScmKind.LOGNORMAL_LMM:
        moments = [(math.exp(m + v / 2.0), math.exp(2.0 * m + v) * math.expm1(v)) for m, v, _ in marginals]
    else:
        moments = [(m, v) for m, v, _ in marginals]
    weights = np.array([w for _, _, w in marginals])
    mean = float(sum(w * mm for w, (mm, _) in zip(weights, moments)))
    second = float(sum(w * (vv + mm ** 2) for w, (mm, vv) in zip(weights, moments)))
    sd = math.sqrt(max(0.0, second - mean ** 2))
    if sd == 0:
        return Degenerate(mean)
    lo = mean - spec.width_sd * sd
    if params.kind == ScmKind.LOGNORMAL_LMM:
        lo = max(lo, 0.0)
    points = np.linspace(lo, mean + spec.width_sd * sd, spec.n_points)
    density = np.zeros_like(points)
    for m, v, weight in marginals:
        s = math.sqrt(v)
        if s == 0:
            raise UnsupportedQueryError("Mixture with a degenerate component has no density")
        if params.kind == ScmKind.LOGNORMAL_LMM:
            density += weight * _lognormal_pdf(points, m, s)
        else:
            density += weight * np.exp(-0.5 * ((points - m) / s) ** 2) / (s * math.sqrt(2.0 * math.pi))
    return Grid.normalized(points, density)
