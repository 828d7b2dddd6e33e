"""
Structural causal models for longitudinal exposure studies.

Four model kinds are supported: the ideal crossover design, the Gaussian
linear mixed model, its log-normal transform and its thresholded (binary)
version. Panels are simulated with their ground-truth latents so that
potential outcomes, individual causal effects and the closed-form effect
measures can be evaluated exactly.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.special import expit

from cwce.distributions import CwceDistribution, Degenerate, Gaussian
from cwce.errors import DimensionError, DomainError, ParameterValidationError, UnsupportedCombinationError
from cwce.gauss_kit import psd_factor, std_normal_cdf
from cwce.rng import individual_generator

logger = logging.getLogger("cwce.scm_core")

PROB_SUM_TOL = 1e-12
_CORR_TOL = 1e-10


class ScmKind(str, Enum):
    CROSSOVER = "Crossover"
    GAUSSIAN_LMM = "GaussianLmm"
    LOGNORMAL_LMM = "LogNormalLmm"
    TRUNCATED_LMM = "TruncatedLmm"


class EffectMeasure(str, Enum):
    ACE = "ACE"
    CACE = "CACE"


class ScmParams(BaseModel):
    """
    Full parameter set of one structural causal model.

    For the log-normal kind every parameter lives on the log scale; the
    observed outcome is Z = exp(Y).
    """

    model_config = ConfigDict(frozen=True, extra="forbid", allow_inf_nan=False)

    kind: ScmKind = Field(..., description="Model variant")
    mu: float = Field(0.0, description="Outcome intercept")
    beta1: float = Field(0.0, description="Exposure effect at lag 1")
    beta2: float = Field(0.0, description="Exposure effect at lag 2")
    beta_c: float = Field(0.0, description="Effect of the previous confounder on the outcome")
    alpha0: float = Field(0.0, description="Exposure-assignment intercept (logit scale)")
    alpha1: float = Field(0.0, description="Assignment coefficient of the current outcome")
    alpha2: float = Field(0.0, description="Assignment coefficient of the previous exposure")
    alpha3: float = Field(0.0, description="Assignment coefficient of the current confounder")
    tau0: float = Field(0.0, ge=0.0, description="Std. dev. of the random intercept U0")
    tau1: float = Field(0.0, ge=0.0, description="Std. dev. of the lag-1 receptiveness U1")
    tau2: float = Field(0.0, ge=0.0, description="Std. dev. of the lag-2 receptiveness U2")
    sigma: float = Field(0.0, ge=0.0, description="Residual std. dev.")
    latent_corr: Tuple[Tuple[float, float, float], Tuple[float, float, float], Tuple[float, float, float]] = Field(
        ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)),
        description="Correlation matrix of (U0, U1, U2)",
    )
    confounder_law: Tuple[Tuple[float, float], ...] = Field(
        ((0.0, 1.0),), description="Support points and probabilities of the confounder"
    )
    delta: float = Field(0.0, description="Outcome threshold (TruncatedLmm only)")

    @field_validator("confounder_law")
    @classmethod
    def _check_confounder_law(cls, law):
        if not law:
            raise ValueError("confounder_law must not be empty")
        probs = np.array([p for _, p in law], dtype=float)
        if np.any(probs < 0):
            raise ValueError("confounder_law probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"confounder_law probabilities sum to {probs.sum()!r}, not 1")
        return law

    @field_validator("latent_corr")
    @classmethod
    def _check_latent_corr(cls, corr):
        mat = np.array(corr, dtype=float)
        if np.max(np.abs(mat - mat.T)) > _CORR_TOL:
            raise ValueError("latent_corr must be symmetric")
        if np.max(np.abs(np.diag(mat) - 1.0)) > _CORR_TOL:
            raise ValueError("latent_corr must have a unit diagonal")
        if np.linalg.eigvalsh(mat)[0] < -_CORR_TOL:
            raise ValueError("latent_corr must be positive semidefinite")
        return corr

    @model_validator(mode="after")
    def _check_crossover(self):
        if self.kind == ScmKind.CROSSOVER:
            if self.sigma != 0.0:
                raise ValueError("Crossover model has no outcome noise; sigma must be 0")
            if any(value != 0.0 for value, _ in self.confounder_law):
                raise ValueError("Crossover model has no confounder; confounder_law must be {0: 1}")
        return self

    @classmethod
    def create(cls, **fields) -> "ScmParams":
        """Build parameters, reporting invalid input as ParameterValidationError."""
        try:
            return cls(**fields)
        except ValidationError as e:
            raise ParameterValidationError(str(e)) from e

    def check(self) -> "ScmParams":
        """Re-validate (guards against ``model_construct`` bypasses)."""
        return ScmParams.create(**self.model_dump())

    def replace(self, **changes) -> "ScmParams":
        return ScmParams.create(**{**self.model_dump(), **changes})

    @property
    def tau(self) -> np.ndarray:
        return np.array([self.tau0, self.tau1, self.tau2])

    @property
    def latent_cov(self) -> np.ndarray:
        """Covariance of (U0, U1, U2): diag(tau) R diag(tau)."""
        d = np.diag(self.tau)
        return d @ np.array(self.latent_corr, dtype=float) @ d

    @property
    def confounder_values(self) -> np.ndarray:
        return np.array([v for v, _ in self.confounder_law], dtype=float)

    @property
    def confounder_probs(self) -> np.ndarray:
        return np.array([p for _, p in self.confounder_law], dtype=float)

    @property
    def has_lag2(self) -> bool:
        return self.kind != ScmKind.CROSSOVER

    @classmethod
    def gaussian_preset(cls) -> "ScmParams":
        """Blood-pressure scale Gaussian linear mixed model."""
        return cls(
            kind=ScmKind.GAUSSIAN_LMM, mu=120.0, beta1=-10.0, beta2=-5.0, beta_c=5.0,
            alpha0=-3.0, alpha1=0.05, alpha2=1.0, alpha3=0.7,
            tau0=5.0, tau1=10.0, tau2=5.0, sigma=1.0,
            confounder_law=((0.7, 0.3), (-0.3, 0.7)), delta=120.0,
        )

    @classmethod
    def lognormal_preset(cls) -> "ScmParams":
        """Log-scale parameters of the log-normal model."""
        return cls(
            kind=ScmKind.LOGNORMAL_LMM, mu=0.0, beta1=-0.2, beta2=-0.1, beta_c=4.0,
            alpha0=-0.5, alpha1=0.01, alpha2=1.0, alpha3=0.7,
            tau0=0.25, tau1=0.5, tau2=0.25, sigma=0.25,
            confounder_law=((0.5, 0.5), (-0.5, 0.5)),
        )

    @classmethod
    def truncated_preset(cls) -> "ScmParams":
        """Gaussian model thresholded at 120 (elevated blood pressure)."""
        return cls.gaussian_preset().model_copy(update={"kind": ScmKind.TRUNCATED_LMM})

    @classmethod
    def crossover_preset(cls) -> "ScmParams":
        """Two-period crossover: randomized order, U_AY = beta1 + U1."""
        return cls(kind=ScmKind.CROSSOVER, mu=120.0, beta1=-10.0, tau0=5.0, tau1=10.0, alpha0=0.0)


@dataclass(frozen=True)
class ExposureRegime:
    """Exposure path (a_1, ..., a_{k-1}); the reference regime is all zeros."""

    a: Tuple[int, ...]

    def __post_init__(self):
        values = tuple(int(v) for v in self.a)
        if any(v not in (0, 1) for v in values):
            raise DomainError(f"Exposure regime entries must be 0 or 1, got {list(self.a)}")
        object.__setattr__(self, "a", values)

    @classmethod
    def zeros(cls, length: int) -> "ExposureRegime":
        return cls(tuple([0] * length))

    def __len__(self) -> int:
        return len(self.a)

    def lags(self, k: int) -> Tuple[int, int]:
        """(a_{k-1}, a_{k-2}) with exposures before time 1 equal to 0."""
        if len(self.a) < k - 1:
            raise DimensionError(f"Regime of length {len(self.a)} is too short for time {k}")
        lag1 = self.a[k - 2] if k >= 2 else 0
        lag2 = self.a[k - 3] if k >= 3 else 0
        return lag1, lag2


RegimeLike = Union[ExposureRegime, Sequence[int]]


def as_regime(regime: RegimeLike) -> ExposureRegime:
    return regime if isinstance(regime, ExposureRegime) else ExposureRegime(tuple(regime))


def _frozen(values: Iterable[float], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Individual:
    """
    One simulated trajectory with its ground-truth latents.

    ``y`` holds the observed outcome scale: Z = exp(Y) for the log-normal
    kind, the continuous Y for the thresholded kind (whose indicators are
    in ``d``).
    """

    u: np.ndarray
    noise_y: np.ndarray
    noise_a: np.ndarray
    c: np.ndarray
    a: np.ndarray
    y: np.ndarray
    d: Optional[np.ndarray] = None

    @classmethod
    def from_arrays(cls, u, noise_y, noise_a, c, a, y, d=None) -> "Individual":
        """Build an individual from plain sequences, stored read-only."""
        lengths = {len(noise_y), len(noise_a), len(c), len(a), len(y)} | ({len(d)} if d is not None else set())
        if len(u) != 3 or len(lengths) != 1:
            raise DimensionError(f"Inconsistent individual arrays: latents {len(u)}, series lengths {sorted(lengths)}")
        return cls(
            u=_frozen(u), noise_y=_frozen(noise_y), noise_a=_frozen(noise_a),
            c=_frozen(c), a=_frozen(a, dtype=int), y=_frozen(y),
            d=None if d is None else _frozen(d, dtype=int),
        )

    @property
    def u0(self) -> float:
        return float(self.u[0])

    @property
    def u1(self) -> float:
        return float(self.u[1])

    @property
    def u2(self) -> float:
        return float(self.u[2])

    @property
    def m(self) -> int:
        return self.y.size

    def factual_outcome(self, k: int) -> float:
        """Observed outcome at time k (indicator for the thresholded kind)."""
        if self.d is not None:
            return float(self.d[k - 1])
        return float(self.y[k - 1])

    def truncate(self, m: int) -> "Individual":
        return Individual(
            u=self.u,
            noise_y=_frozen(self.noise_y[:m]),
            noise_a=_frozen(self.noise_a[:m]),
            c=_frozen(self.c[:m]),
            a=_frozen(self.a[:m], dtype=int),
            y=_frozen(self.y[:m]),
            d=None if self.d is None else _frozen(self.d[:m], dtype=int),
        )


@dataclass(frozen=True)
class Panel:
    individuals: Tuple[Individual, ...]
    params: ScmParams
    seed: int
    m: int

    @property
    def n(self) -> int:
        return len(self.individuals)

    def subset(self, n: int, m: int) -> "Panel":
        """First ``n`` individuals observed for their first ``m`` repeats."""
        if not 1 <= n <= self.n or not 1 <= m <= self.m:
            raise DimensionError(f"Subset ({n}, {m}) exceeds panel ({self.n}, {self.m})")
        return Panel(tuple(ind.truncate(m) for ind in self.individuals[:n]), self.params, self.seed, m)


def linear_outcome(params: ScmParams, u: np.ndarray, c: Sequence[float], a: Sequence[int], k: int, noise: float) -> float:
    """
    Continuous (log-scale for the log-normal kind) outcome at time k.

    Shared by simulation and potential-outcome replay so that replaying
    the factual exposures reproduces the stored outcome bit for bit.
    """
    value = params.mu + u[0]
    if k >= 2:
        value = value + params.beta_c * c[k - 2]
        value = value + a[k - 2] * (params.beta1 + u[1])
    if k >= 3 and params.has_lag2:
        value = value + a[k - 3] * (params.beta2 + u[2])
    return value + noise


def _observed_scale(params: ScmParams, value: float) -> float:
    if params.kind == ScmKind.LOGNORMAL_LMM:
        return math.exp(value)
    if params.kind == ScmKind.TRUNCATED_LMM:
        return float(value > params.delta)
    return value


def _draw_confounders(params: ScmParams, uniforms: np.ndarray) -> np.ndarray:
    cum = np.cumsum(params.confounder_probs)
    idx = np.minimum(np.searchsorted(cum, uniforms, side="right"), cum.size - 1)
    return params.confounder_values[idx]


def _simulate_individual(params: ScmParams, m: int, seed: int, index: int, factor: np.ndarray) -> Individual:
    gen = individual_generator(seed, index)
    u = factor @ gen.standard_normal(3)
    c = _draw_confounders(params, gen.random(m))
    noise_y = params.sigma * gen.standard_normal(m)
    noise_a = gen.random(m)

    a = np.zeros(m, dtype=int)
    y_lin = np.zeros(m)
    crossover = params.kind == ScmKind.CROSSOVER
    for k in range(1, m + 1):
        y_lin[k - 1] = linear_outcome(params, u, c, a, k, noise_y[k - 1])
        if crossover:
            if k == 1:
                a[0] = int(expit(params.alpha0) > noise_a[0])
            elif k == 2:
                a[1] = 1 - a[0]
            continue
        logit = params.alpha0 + params.alpha1 * y_lin[k - 1] + params.alpha3 * c[k - 1]
        if k >= 2:
            logit += params.alpha2 * a[k - 2]
        a[k - 1] = int(expit(logit) > noise_a[k - 1])

    d = None
    y = y_lin
    if params.kind == ScmKind.LOGNORMAL_LMM:
        y = np.array([_observed_scale(params, v) for v in y_lin])
    elif params.kind == ScmKind.TRUNCATED_LMM:
        d = _frozen(y_lin > params.delta, dtype=int)
    return Individual(
        u=_frozen(u), noise_y=_frozen(noise_y), noise_a=_frozen(noise_a),
        c=_frozen(c), a=_frozen(a, dtype=int), y=_frozen(y), d=d,
    )


def simulate_panel(params: ScmParams, n: int, m: int, seed: int, threads: int = 1) -> Panel:
    """
    Simulate ``n`` individuals for ``m`` repeats.

    Args:
        params: Model parameters
        n: Number of individuals (>= 1)
        m: Repeats per individual (>= 3; exactly 3 for the crossover)
        seed: 64-bit root seed
        threads: Worker threads; the result does not depend on it

    Returns:
        Panel reproducible from (params, seed, n, m)
    """
    params = params.check()
    if n < 1:
        raise DomainError(f"Panel needs at least one individual, got n={n}")
    if params.kind == ScmKind.CROSSOVER and m != 3:
        raise DomainError(f"Crossover panels have exactly 3 repeats, got m={m}")
    if m < 3:
        raise DomainError(f"Mixed-model panels need m >= 3, got m={m}")

    factor = psd_factor(params.latent_cov)
    logger.info(f"Simulating {params.kind.value} panel n={n} m={m} seed={seed} threads={threads}")
    if threads <= 1:
        individuals = [_simulate_individual(params, m, seed, i, factor) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            individuals = list(pool.map(lambda i: _simulate_individual(params, m, seed, i, factor), range(n)))
    return Panel(tuple(individuals), params, int(seed), m)


def _check_time(ind: Individual, k: int) -> None:
    if not 1 <= k <= ind.m:
        raise DimensionError(f"Time {k} outside 1..{ind.m}")


def potential_outcome(ind: Individual, params: ScmParams, regime: RegimeLike, k: int) -> float:
    """
    Outcome at time k had the exposures followed ``regime``.

    Replays the outcome equation with the individual's own latents,
    confounders and noise. Returns Z for the log-normal kind and the
    threshold indicator for the thresholded kind.
    """
    _check_time(ind, k)
    regime = as_regime(regime)
    regime.lags(k)
    a = np.zeros(max(k - 1, 1), dtype=int)
    a[: k - 1] = regime.a[: k - 1]
    value = linear_outcome(params, ind.u, ind.c, a, k, ind.noise_y[k - 1])
    return _observed_scale(params, value)


def _effect_terms(params: ScmParams, u: np.ndarray, lag1: int, lag2: int) -> float:
    value = lag1 * (params.beta1 + u[1])
    if params.has_lag2:
        value += lag2 * (params.beta2 + u[2])
    return value


def true_ice(ind: Individual, params: ScmParams, regime: RegimeLike, k: int) -> float:
    """Individual causal effect Y_k^a - Y_k^0 on the observed scale."""
    _check_time(ind, k)
    regime = as_regime(regime)
    lag1, lag2 = regime.lags(k)
    if params.kind in (ScmKind.GAUSSIAN_LMM, ScmKind.CROSSOVER):
        return float(_effect_terms(params, ind.u, lag1, lag2))
    return potential_outcome(ind, params, regime, k) - potential_outcome(ind, params, ExposureRegime.zeros(k - 1), k)


def true_eice(ind: Individual, params: ScmParams, regime: RegimeLike, k: int, c_value: Optional[float] = None) -> float:
    """
    ICE averaged over the outcome noise at time k.

    Args:
        ind: Individual (latents are used, noise is integrated out)
        params: Model parameters
        regime: Exposure regime
        k: Time index
        c_value: Confounder C_{k-1}; defaults to the individual's stored value

    Returns:
        Expected ICE given the latents and the confounder
    """
    _check_time(ind, k)
    regime = as_regime(regime)
    lag1, lag2 = regime.lags(k)
    if params.kind in (ScmKind.GAUSSIAN_LMM, ScmKind.CROSSOVER):
        return float(_effect_terms(params, ind.u, lag1, lag2))

    base = params.mu + ind.u[0]
    if k >= 2:
        c_prev = float(ind.c[k - 2]) if c_value is None else float(c_value)
        base += params.beta_c * c_prev
    effect = _effect_terms(params, ind.u, lag1, lag2)

    if params.kind == ScmKind.LOGNORMAL_LMM:
        return math.exp(base + params.sigma ** 2 / 2.0) * (math.exp(effect) - 1.0)

    # Thresholded kind
    if params.sigma == 0:
        return float(base + effect > params.delta) - float(base > params.delta)
    return float(
        std_normal_cdf((params.delta - base) / params.sigma)
        - std_normal_cdf((params.delta - base - effect) / params.sigma)
    )


def _exposure_vector(params: ScmParams, lag1: int, lag2: int) -> np.ndarray:
    return np.array([0.0, lag1, lag2 if params.has_lag2 else 0.0])


def _conditional_effect(params: ScmParams, lag1: int, lag2: int, c_prev: float) -> float:
    mean_effect = lag1 * params.beta1 + (lag2 * params.beta2 if params.has_lag2 else 0.0)
    sigma_u = params.latent_cov
    w_a = _exposure_vector(params, lag1, lag2)
    w_a[0] = 1.0
    var_a = float(w_a @ sigma_u @ w_a)
    var_0 = float(sigma_u[0, 0])
    base = params.mu + params.beta_c * c_prev

    if params.kind == ScmKind.LOGNORMAL_LMM:
        scale = math.exp(base + params.sigma ** 2 / 2.0)
        return scale * (math.exp(mean_effect + var_a / 2.0) - math.exp(var_0 / 2.0))

    # Thresholded kind: P(Y^a > delta) - P(Y^0 > delta)
    sd_a = math.sqrt(var_a + params.sigma ** 2)
    sd_0 = math.sqrt(var_0 + params.sigma ** 2)

    def exceed(mean: float, sd: float) -> float:
        if sd == 0:
            return float(mean > params.delta)
        return float(std_normal_cdf((mean - params.delta) / sd))

    return exceed(base + mean_effect, sd_a) - exceed(base, sd_0)


def closed_form_effect(
    params: ScmParams,
    measure: EffectMeasure,
    regime: RegimeLike,
    k: int,
    c_value: Optional[float] = None,
) -> float:
    """
    Population (ACE) or confounder-conditional (CACE) average causal effect.

    Args:
        params: Model parameters
        measure: ACE or CACE
        regime: Exposure regime
        k: Time index (>= 1)
        c_value: Confounder C_{k-1}, required for CACE

    Returns:
        Exact effect on the observed outcome scale
    """
    measure = EffectMeasure(measure)
    regime = as_regime(regime)
    if k < 1:
        raise DimensionError(f"Time index must be >= 1, got {k}")
    lag1, lag2 = regime.lags(k)

    if measure == EffectMeasure.CACE:
        if params.kind == ScmKind.CROSSOVER:
            raise UnsupportedCombinationError("Crossover model has no confounder to condition on")
        if c_value is None:
            raise UnsupportedCombinationError("CACE requires a confounder value")

    if params.kind in (ScmKind.GAUSSIAN_LMM, ScmKind.CROSSOVER):
        return float(lag1 * params.beta1 + (lag2 * params.beta2 if params.has_lag2 else 0.0))

    if k == 1:
        # No confounder feeds the first outcome and no exposure precedes it
        return 0.0
    if measure == EffectMeasure.CACE:
        return _conditional_effect(params, lag1, lag2, float(c_value))
    return float(sum(
        prob * _conditional_effect(params, lag1, lag2, value)
        for value, prob in params.confounder_law
    ))


def ice_distribution(params: ScmParams, regime: RegimeLike, k: int) -> CwceDistribution:
    """
    Population law of the ICE for the kinds where it is Gaussian.

    Returns N(a.beta, x Sigma x^T) with x = (0, a_{k-1}, a_{k-2}), or a point
    mass when the regime has no effect at k.
    """
    if params.kind not in (ScmKind.GAUSSIAN_LMM, ScmKind.CROSSOVER):
        raise UnsupportedCombinationError(f"No closed-form ICE law for {params.kind.value}")
    regime = as_regime(regime)
    lag1, lag2 = regime.lags(k)
    x = _exposure_vector(params, lag1, lag2)
    mean = float(lag1 * params.beta1 + (lag2 * params.beta2 if params.has_lag2 else 0.0))
    var = float(x @ params.latent_cov @ x)
    if var == 0:
        return Degenerate(mean)
    return Gaussian(mean, var)


def panel_true_ices(panel: Panel, regime: RegimeLike, k: int) -> np.ndarray:
    """True ICE of every individual in the panel."""
    return np.array([true_ice(ind, panel.params, regime, k) for ind in panel.individuals])
