"""
Restricted maximum likelihood fitting of the linear mixed model.

The model for individual i is y_i = X_i beta + Z_i u_i + e_i with random
intercept and lag-1/lag-2 exposure slopes, u_i ~ N(0, Sigma) and
e_i ~ N(0, sigma^2 I). The restricted log-likelihood is evaluated per
individual through the Woodbury identity on 3x3 blocks and maximized over
a log-scale parameterization of (Sigma, sigma).

A naive pooled least-squares comparator (no random effects) is provided to
show the bias time-varying confounding induces in the fixed effects.
"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy import linalg
from scipy.optimize import minimize

from cwce.errors import (
    DomainError,
    IdentifiabilityError,
    RankDeficiencyError,
    UnsupportedCombinationError,
)
from cwce.gauss_kit import lagged_confounders, lagged_exposures, psd_factor
from cwce.scm_core import Panel, ScmKind, ScmParams

logger = logging.getLogger("cwce.reml_fit")

LOG_LOWER_BOUND = -20.0
LOG_UPPER_BOUND = 20.0
# Variance components below exp(-15) (on the sd scale) are reported as 0
ZERO_REPORT_THRESHOLD = math.exp(-15.0)


class ResponseTransform(str, Enum):
    IDENTITY = "Identity"
    LOG = "Log"


class CovStructure(str, Enum):
    DIAGONAL = "Diagonal"
    UNSTRUCTURED = "Unstructured"


class FixedTerm(str, Enum):
    """
    Fixed-effect columns of the outcome model at time k.

    LAG1 and LAG2 are A_{k-1} and A_{k-2}. CONFOUNDER is C_{k-1}, the
    confounder that drove the exposure A_{k-1} and enters Y_k in the
    simulated model; it is 0 at k = 1.
    """

    INTERCEPT = "intercept"
    LAG1 = "lag1"
    LAG2 = "lag2"
    CONFOUNDER = "confounder"


RANDOM_TERMS = ("intercept", "lag1", "lag2")


class ModelSpec(BaseModel):
    """Which response scale, fixed effects and random-effects covariance to fit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    response_transform: ResponseTransform = Field(ResponseTransform.IDENTITY, description="Scale of the response")
    fixed_terms: Tuple[FixedTerm, ...] = Field(
        (FixedTerm.INTERCEPT, FixedTerm.LAG1, FixedTerm.LAG2, FixedTerm.CONFOUNDER),
        description="Fixed-effect columns; the confounder enters as C_{k-1}",
    )
    random_cov_structure: CovStructure = Field(CovStructure.DIAGONAL, description="Structure of Sigma")

    @field_validator("fixed_terms")
    @classmethod
    def _check_terms(cls, terms):
        if FixedTerm.INTERCEPT not in terms:
            raise ValueError("fixed_terms must include the intercept")
        if len(set(terms)) != len(terms):
            raise ValueError("fixed_terms must not repeat a term")
        return terms

    @classmethod
    def for_kind(cls, kind: ScmKind, structure: CovStructure = CovStructure.DIAGONAL) -> "ModelSpec":
        transform = ResponseTransform.LOG if kind == ScmKind.LOGNORMAL_LMM else ResponseTransform.IDENTITY
        return cls(response_transform=transform, random_cov_structure=structure)

    @property
    def fixed_names(self) -> Tuple[str, ...]:
        return tuple(term.value for term in self.fixed_terms)

    @property
    def n_theta(self) -> int:
        return 4 if self.random_cov_structure == CovStructure.DIAGONAL else 7


def fixed_design(a: np.ndarray, c: np.ndarray, terms: Sequence[FixedTerm]) -> np.ndarray:
    """Fixed-effect design of one trajectory."""
    m = len(a)
    lag1, lag2 = lagged_exposures(a, m)
    columns = {
        FixedTerm.INTERCEPT: np.ones(m),
        FixedTerm.LAG1: lag1,
        FixedTerm.LAG2: lag2,
        FixedTerm.CONFOUNDER: lagged_confounders(c, m),
    }
    return np.column_stack([columns[term] for term in terms])


def random_design(a: np.ndarray) -> np.ndarray:
    m = len(a)
    lag1, lag2 = lagged_exposures(a, m)
    return np.column_stack([np.ones(m), lag1, lag2])


class PanelView:
    """
    Response and design matrices of a panel, with per-individual
    cross-products precomputed for the likelihood.
    """

    def __init__(self, ys: Sequence[np.ndarray], xs: Sequence[np.ndarray], zs: Sequence[np.ndarray], spec: ModelSpec):
        if not (len(ys) == len(xs) == len(zs)) or len(ys) == 0:
            raise DomainError("PanelView needs the same non-zero number of responses and designs")
        self.spec = spec
        self.ys = [np.asarray(y, dtype=float) for y in ys]
        self.xs = [np.asarray(x, dtype=float) for x in xs]
        self.zs = [np.asarray(z, dtype=float) for z in zs]
        self.n = len(self.ys)
        self.n_obs = int(sum(y.size for y in self.ys))
        self.p = self.xs[0].shape[1]

        self.ztz = np.stack([z.T @ z for z in self.zs])
        self.ztx = np.stack([z.T @ x for z, x in zip(self.zs, self.xs)])
        self.zty = np.stack([z.T @ y for z, y in zip(self.zs, self.ys)])
        self.xtx = np.sum(np.stack([x.T @ x for x in self.xs]), axis=0)
        self.xty = np.sum(np.stack([x.T @ y for x, y in zip(self.xs, self.ys)]), axis=0)
        self.yty = float(np.sum([y @ y for y in self.ys]))

    @classmethod
    def from_panel(cls, panel: Panel, spec: ModelSpec) -> "PanelView":
        """
        Build the view of a simulated panel.

        Log responses are taken for the log-normal kind; the thresholded
        kind is fitted on its continuous outcome.
        """
        if panel.params.kind == ScmKind.CROSSOVER:
            raise UnsupportedCombinationError("Crossover panels are not fitted with a mixed model")
        ys, xs, zs = [], [], []
        for ind in panel.individuals:
            y = np.asarray(ind.y, dtype=float)
            if spec.response_transform == ResponseTransform.LOG:
                if np.any(y <= 0):
                    raise DomainError("Log transform needs strictly positive responses")
                y = np.log(y)
            ys.append(y)
            xs.append(fixed_design(ind.a, ind.c, spec.fixed_terms))
            zs.append(random_design(ind.a))
        return cls(ys, xs, zs, spec)

    def stacked(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.concatenate(self.ys), np.vstack(self.xs)


@dataclass(frozen=True)
class VarianceComponents:
    sigma_u: np.ndarray
    sigma: float

    @classmethod
    def from_taus(cls, tau0: float, tau1: float, tau2: float, sigma: float) -> "VarianceComponents":
        return cls(np.diag(np.square([tau0, tau1, tau2])), sigma)


def unpack_theta(theta: np.ndarray, structure: CovStructure) -> Tuple[np.ndarray, float]:
    """Map optimizer coordinates to (L, sigma^2) with Sigma = L L^T."""
    theta = np.asarray(theta, dtype=float)
    if structure == CovStructure.DIAGONAL:
        return np.diag(np.exp(theta[:3])), float(np.exp(2.0 * theta[3]))
    factor = np.diag(np.exp(theta[:3]))
    factor[1, 0], factor[2, 0], factor[2, 1] = theta[3], theta[4], theta[5]
    return factor, float(np.exp(2.0 * theta[6]))


def pack_theta(vc: VarianceComponents, structure: CovStructure) -> np.ndarray:
    floor = math.exp(LOG_LOWER_BOUND)
    log_sigma = math.log(max(vc.sigma, floor))
    if structure == CovStructure.DIAGONAL:
        sds = np.sqrt(np.clip(np.diag(vc.sigma_u), floor ** 2, None))
        return np.append(np.log(sds), log_sigma)
    jitter = floor ** 2 * np.eye(3)
    factor = np.linalg.cholesky(vc.sigma_u + jitter)
    diag = np.log(np.clip(np.diag(factor), floor, None))
    return np.array([diag[0], diag[1], diag[2], factor[1, 0], factor[2, 0], factor[2, 1], log_sigma])


def _profile(view: PanelView, factor: np.ndarray, sigma2: float):
    """Restricted log-likelihood and GLS fixed effects at Sigma = factor factor^T."""
    if not (sigma2 > 0 and math.isfinite(sigma2)) or not np.all(np.isfinite(factor)):
        return -math.inf, None
    inner = np.einsum("ji,njk,kl->nil", factor, view.ztz, factor) / sigma2
    m_blocks = inner + np.eye(3)
    try:
        chol = np.linalg.cholesky(m_blocks)
    except np.linalg.LinAlgError:
        return -math.inf, None
    logdet_m = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)))

    a_blocks = np.einsum("ji,njp->nip", factor, view.ztx)
    b_blocks = np.einsum("ji,nj->ni", factor, view.zty)
    m_inv_a = np.linalg.solve(m_blocks, a_blocks)
    m_inv_b = np.linalg.solve(m_blocks, b_blocks[..., None])[..., 0]

    xvx = (view.xtx - np.einsum("nip,niq->pq", a_blocks, m_inv_a) / sigma2) / sigma2
    xvy = (view.xty - np.einsum("nip,ni->p", a_blocks, m_inv_b) / sigma2) / sigma2
    yvy = (view.yty - float(np.einsum("ni,ni->", b_blocks, m_inv_b)) / sigma2) / sigma2

    try:
        xvx_factor = linalg.cho_factor(0.5 * (xvx + xvx.T), lower=True)
    except (linalg.LinAlgError, ValueError):
        return -math.inf, None
    beta = linalg.cho_solve(xvx_factor, xvy)
    logdet_xvx = 2.0 * float(np.sum(np.log(np.diag(xvx_factor[0]))))
    logdet_v = view.n_obs * math.log(sigma2) + float(logdet_m)
    value = -0.5 * (logdet_v + logdet_xvx + yvy - float(beta @ xvy))
    if not math.isfinite(value):
        return -math.inf, None
    return value, beta


def restricted_loglik(view: PanelView, spec: ModelSpec, vc: VarianceComponents) -> float:
    """
    Restricted log-likelihood (without the 2*pi constant) at the given
    variance components, with beta profiled out by GLS.

    Returns -inf where the marginal covariance is not positive definite.
    """
    if spec.fixed_terms != view.spec.fixed_terms:
        raise DomainError("Model specification does not match the panel view")
    value, _ = _profile(view, psd_factor(vc.sigma_u), vc.sigma ** 2)
    return value


def dense_restricted_loglik(view: PanelView, vc: VarianceComponents) -> float:
    """Same objective assembled as one block-diagonal matrix (small panels only)."""
    y, x = view.stacked()
    blocks = [z @ vc.sigma_u @ z.T + vc.sigma ** 2 * np.eye(z.shape[0]) for z in view.zs]
    v = linalg.block_diag(*blocks)
    sign, logdet_v = np.linalg.slogdet(v)
    if sign <= 0:
        return -math.inf
    v_inv_x = np.linalg.solve(v, x)
    v_inv_y = np.linalg.solve(v, y)
    xvx = x.T @ v_inv_x
    beta = np.linalg.solve(xvx, x.T @ v_inv_y)
    resid = y - x @ beta
    _, logdet_xvx = np.linalg.slogdet(xvx)
    return -0.5 * (logdet_v + logdet_xvx + float(resid @ np.linalg.solve(v, resid)))


class RemlFit(BaseModel):
    """Estimates and diagnostics of one REML fit."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    spec: ModelSpec
    fixed_names: Tuple[str, ...]
    beta_hat: Tuple[float, ...]
    sigma_u: Tuple[Tuple[float, float, float], Tuple[float, float, float], Tuple[float, float, float]]
    sigma: float = Field(..., ge=0.0)
    restricted_loglik: float
    converged: bool
    n_iter: int = 0
    gradient_norm: float = 0.0
    n_individuals: int = 0
    n_obs: int = 0
    start_fallback: bool = False
    trace: Tuple[float, ...] = ()

    @property
    def tau_hat(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(np.array(self.sigma_u)), 0.0, None))

    def coef(self, name: str) -> float:
        """Fixed effect by term name; terms left out of the model count as 0."""
        if name in self.fixed_names:
            return self.beta_hat[self.fixed_names.index(name)]
        return 0.0

    def to_params(self, template: ScmParams) -> ScmParams:
        """
        Plug the estimates into a parameter set.

        Assignment coefficients, the confounder law and the threshold are
        taken from ``template``; they do not enter the CWCE.
        """
        log_scale = self.spec.response_transform == ResponseTransform.LOG
        if log_scale != (template.kind == ScmKind.LOGNORMAL_LMM) or template.kind == ScmKind.CROSSOVER:
            raise UnsupportedCombinationError(
                f"A {self.spec.response_transform.value} fit cannot parameterize a {template.kind.value} model"
            )
        cov = np.array(self.sigma_u)
        tau = self.tau_hat
        corr = np.eye(3)
        for i in range(3):
            for j in range(3):
                if i != j and tau[i] > 0 and tau[j] > 0:
                    corr[i, j] = cov[i, j] / (tau[i] * tau[j])
        corr = np.clip(0.5 * (corr + corr.T), -1.0, 1.0)
        return template.replace(
            mu=self.coef("intercept"),
            beta1=self.coef("lag1"),
            beta2=self.coef("lag2"),
            beta_c=self.coef("confounder"),
            tau0=float(tau[0]), tau1=float(tau[1]), tau2=float(tau[2]),
            sigma=self.sigma,
            latent_corr=tuple(tuple(float(v) for v in row) for row in corr),
        )

    @classmethod
    def from_params(cls, params: ScmParams, spec: Optional[ModelSpec] = None) -> "RemlFit":
        """A converged fit whose estimates equal ``params`` (plug-in of the truth)."""
        spec = spec or ModelSpec.for_kind(params.kind)
        values = {"intercept": params.mu, "lag1": params.beta1, "lag2": params.beta2, "confounder": params.beta_c}
        cov = params.latent_cov
        return cls(
            spec=spec,
            fixed_names=spec.fixed_names,
            beta_hat=tuple(float(values[name]) for name in spec.fixed_names),
            sigma_u=tuple(tuple(float(v) for v in row) for row in cov),
            sigma=params.sigma,
            restricted_loglik=0.0,
            converged=True,
        )

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RemlFit":
        return cls.model_validate_json(text)


@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 20000
    xatol: float = 1e-9
    fatol_rel: float = 1e-9
    grad_tol: float = 1e-4
    fd_step: float = 1e-5
    polish: bool = True


def screen_identifiability(view: PanelView) -> None:
    """
    Reject designs that cannot identify the model.

    Raises:
        IdentifiabilityError: naming the first fixed column that is collinear
            with the preceding ones, or the random slope with no variation
    """
    _, x = view.stacked()
    names = view.spec.fixed_names
    for j in range(1, x.shape[1] + 1):
        if np.linalg.matrix_rank(x[:, :j]) < j:
            raise IdentifiabilityError(f"Fixed-effect column '{names[j - 1]}' is collinear with {list(names[:j - 1])}")
    z = np.vstack(view.zs)
    for j, name in enumerate(RANDOM_TERMS[1:], start=1):
        if not np.any(z[:, j] != 0):
            raise IdentifiabilityError(f"Random slope '{name}' has no exposure variation in the panel")


def moment_start(view: PanelView) -> Tuple[VarianceComponents, bool]:
    """
    Method-of-moments starting values.

    Pooled OLS residuals are regressed on Z within each individual; the
    spread of those coefficients minus their sampling noise estimates Sigma.
    Falls back to splitting the response variance 50/25/25 with unit
    residual variance when too few individuals have usable designs.

    Returns:
        Tuple (starting components, whether the fallback was used)
    """
    y, x = view.stacked()
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    coefs, noise_diag, rss, dof = [], [], 0.0, 0
    for yi, xi, zi in zip(view.ys, view.xs, view.zs):
        if zi.shape[0] <= 3 or np.linalg.matrix_rank(zi) < 3:
            continue
        ri = yi - xi @ beta
        gram_inv = np.linalg.inv(zi.T @ zi)
        bi = gram_inv @ zi.T @ ri
        coefs.append(bi)
        noise_diag.append(np.diag(gram_inv))
        rss += float(np.sum((ri - zi @ bi) ** 2))
        dof += zi.shape[0] - 3

    if len(coefs) >= 2 and dof > 0:
        sigma2 = rss / dof
        spread = np.var(np.array(coefs), axis=0, ddof=1) - sigma2 * np.mean(np.array(noise_diag), axis=0)
        floor = 1e-2 * max(sigma2, 1e-8)
        return VarianceComponents(np.diag(np.clip(spread, floor, None)), math.sqrt(sigma2)), False

    total = float(np.var(y)) if y.size > 1 else 1.0
    logger.warning("Too few usable individual designs for moment starts; using a 50/25/25 variance split")
    return VarianceComponents(np.diag([0.5 * total, 0.25 * total, 0.25 * total]), 1.0), True


def _projected_gradient(loglik: Callable[[np.ndarray], float], theta: np.ndarray, step: float, scale: float) -> np.ndarray:
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        up = theta.copy()
        down = theta.copy()
        up[j] += step
        down[j] -= step
        grad[j] = (loglik(up) - loglik(down)) / (2.0 * step) / scale
    # At the lower bound only an outward pull remains; it is not a defect of the optimum
    at_bound = theta <= LOG_LOWER_BOUND + step
    grad[at_bound & (grad < 0)] = 0.0
    return grad


def fit_lmm_reml(view: PanelView, spec: Optional[ModelSpec] = None, opts: Optional[FitOptions] = None) -> RemlFit:
    """
    Maximize the restricted log-likelihood.

    Nelder-Mead on the log-scale parameterization does the search, an
    L-BFGS-B polish with central-difference gradients is kept only if it
    improves the objective. ``converged`` means the projected gradient of
    the per-observation objective has norm below ``opts.grad_tol``.

    Args:
        view: Panel data with designs
        spec: Model specification (defaults to the view's)
        opts: Optimizer options

    Returns:
        RemlFit; a non-converged fit is flagged, not raised
    """
    spec = spec or view.spec
    opts = opts or FitOptions()
    if spec.fixed_terms != view.spec.fixed_terms:
        raise DomainError("Model specification does not match the panel view")
    screen_identifiability(view)
    structure = spec.random_cov_structure

    def loglik(theta: np.ndarray) -> float:
        factor, sigma2 = unpack_theta(theta, structure)
        return _profile(view, factor, sigma2)[0]

    cache: Dict[bytes, float] = {}

    def objective(theta: np.ndarray) -> float:
        key = np.asarray(theta, dtype=float).tobytes()
        if key not in cache:
            value = loglik(theta)
            cache[key] = -value if math.isfinite(value) else math.inf
        return cache[key]

    trace: List[float] = []

    def record(xk: np.ndarray) -> None:
        trace.append(-objective(xk))

    start, fallback = moment_start(view)
    theta0 = np.clip(pack_theta(start, structure), LOG_LOWER_BOUND, LOG_UPPER_BOUND)
    bounds = [
        (LOG_LOWER_BOUND, LOG_UPPER_BOUND) if j < 3 or j == spec.n_theta - 1 else (None, None)
        for j in range(spec.n_theta)
    ]
    f0 = objective(theta0)
    if not math.isfinite(f0):
        raise DomainError("Restricted likelihood is not finite at the starting values")
    logger.info(f"REML fit: n={view.n} obs={view.n_obs} structure={structure.value} start_loglik={-f0:.6f}")

    result = minimize(
        objective, theta0, method="Nelder-Mead", bounds=bounds, callback=record,
        options={
            "maxiter": opts.max_iter,
            "maxfev": 2 * opts.max_iter,
            "xatol": opts.xatol,
            "fatol": opts.fatol_rel * max(1.0, abs(f0)),
            "adaptive": spec.n_theta > 4,
        },
    )
    best_theta, best_f, n_iter = np.asarray(result.x), float(result.fun), int(result.nit)

    if opts.polish:
        def jac(theta: np.ndarray) -> np.ndarray:
            grad = np.zeros_like(theta)
            for j in range(theta.size):
                up = theta.copy()
                down = theta.copy()
                up[j] += opts.fd_step
                down[j] -= opts.fd_step
                grad[j] = (objective(up) - objective(down)) / (2.0 * opts.fd_step)
            return grad if np.all(np.isfinite(grad)) else np.zeros_like(theta)

        polished = minimize(
            objective, best_theta, method="L-BFGS-B", jac=jac, bounds=bounds, callback=record,
            options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-10},
        )
        if float(polished.fun) < best_f:
            best_theta, best_f = np.asarray(polished.x), float(polished.fun)
            n_iter += int(polished.nit)

    grad = _projected_gradient(loglik, best_theta, opts.fd_step, float(view.n_obs))
    grad_norm = float(np.linalg.norm(grad))
    converged = math.isfinite(best_f) and grad_norm < opts.grad_tol
    if not converged:
        logger.warning(f"REML fit did not converge (gradient norm {grad_norm:.3e})")

    factor, sigma2 = unpack_theta(best_theta, structure)
    loglik_hat, beta = _profile(view, factor, sigma2)
    sigma_u = factor @ factor.T
    tau = np.sqrt(np.diag(sigma_u))
    for j in range(3):
        if tau[j] < ZERO_REPORT_THRESHOLD:
            sigma_u[j, :] = 0.0
            sigma_u[:, j] = 0.0
    sigma = math.sqrt(sigma2)
    if sigma < ZERO_REPORT_THRESHOLD:
        sigma = 0.0

    fit = RemlFit(
        spec=spec,
        fixed_names=spec.fixed_names,
        beta_hat=tuple(float(b) for b in beta),
        sigma_u=tuple(tuple(float(v) for v in row) for row in sigma_u),
        sigma=sigma,
        restricted_loglik=float(loglik_hat),
        converged=converged,
        n_iter=n_iter,
        gradient_norm=grad_norm,
        n_individuals=view.n,
        n_obs=view.n_obs,
        start_fallback=fallback,
        trace=tuple(trace),
    )
    logger.info(
        f"REML fit done: loglik={fit.restricted_loglik:.6f} iter={n_iter} "
        f"tau={np.round(fit.tau_hat, 4).tolist()} sigma={sigma:.4f} converged={converged}"
    )
    return fit


@dataclass(frozen=True)
class NaivePooledFit:
    """Pooled least-squares fixed effects (random effects ignored)."""

    fixed_names: Tuple[str, ...]
    beta_hat: Tuple[float, ...]

    def coef(self, name: str) -> float:
        return self.beta_hat[self.fixed_names.index(name)] if name in self.fixed_names else 0.0

    def implied_ace(self, lag1: int = 1, lag2: int = 1) -> float:
        """Effect implied by the pooled slopes for exposures (a_{k-1}, a_{k-2})."""
        return lag1 * self.coef("lag1") + lag2 * self.coef("lag2")


def fit_naive_pooled(view: PanelView, spec: Optional[ModelSpec] = None) -> NaivePooledFit:
    """
    Ordinary least squares on the stacked panel.

    Raises:
        RankDeficiencyError: if the stacked fixed design is rank deficient
    """
    spec = spec or view.spec
    y, x = view.stacked()
    beta, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
    if rank < x.shape[1]:
        raise RankDeficiencyError(f"Pooled design has rank {rank} < {x.shape[1]} columns {list(spec.fixed_names)}")
    return NaivePooledFit(spec.fixed_names, tuple(float(b) for b in beta))
