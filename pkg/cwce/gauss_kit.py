"""
Gaussian numerics for cwce-lab.

Multivariate Gaussian construction and conditioning for the linear mixed
structural models, univariate and bivariate normal probabilities, Cholesky
solves with a jitter ladder, and Gauss-Hermite quadrature over Gaussians.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np
from scipy import linalg
from scipy.special import erfc

from cwce.errors import DimensionError, DomainError, NumericalSingularityError

if TYPE_CHECKING:
    from cwce.scm_core import ScmParams

logger = logging.getLogger("cwce.gauss_kit")

# Multiples of trace/dim added to the diagonal before giving up on a factorization
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)

DEFAULT_QUADRATURE_ORDER = 32
MIN_QUADRATURE_ORDER = 2
MAX_QUADRATURE_ORDER = 64

_SYMMETRY_TOL = 1e-10
_PSD_TOL = 1e-10


@dataclass(frozen=True)
class MvnDist:
    """Multivariate Gaussian law given by its mean vector and covariance matrix."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionError(f"Mean of length {mean.size} does not match covariance of shape {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if cov.size and np.max(np.abs(cov - cov.T)) > _SYMMETRY_TOL * scale:
            raise DomainError("Covariance matrix is not symmetric")
        if cov.size:
            smallest = float(np.linalg.eigvalsh(0.5 * (cov + cov.T))[0])
            if smallest < -_PSD_TOL * max(1.0, float(np.trace(cov))):
                raise DomainError(f"Covariance matrix is not positive semidefinite (eigenvalue {smallest:.3e})")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    def marginal(self, idx: Sequence[int]) -> "MvnDist":
        """Marginal law of the coordinates ``idx``."""
        idx = np.asarray(idx, dtype=int)
        return MvnDist(self.mean[idx], self.cov[np.ix_(idx, idx)])

    def affine(self, matrix: np.ndarray, offset: Optional[np.ndarray] = None) -> "MvnDist":
        """Law of ``matrix @ X + offset``."""
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        mean = matrix @ self.mean
        if offset is not None:
            mean = mean + np.asarray(offset, dtype=float)
        return MvnDist(mean, matrix @ self.cov @ matrix.T)


@dataclass(frozen=True)
class DesignMatrices:
    """
    Random-effects design of one trajectory.

    Row k of ``z`` is (1, a_{k-1}, a_{k-2}) with exposures before time 1 set
    to 0; ``mu_y`` holds the fixed-effect mean of each outcome.
    """

    z: np.ndarray
    mu_y: np.ndarray


def lagged_exposures(a: np.ndarray, h: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lag-1 and lag-2 exposures for outcome times 1..h.

    Args:
        a: Exposures a_1.. (at least h-1 entries are used)
        h: Number of outcome times

    Returns:
        Tuple (a_{k-1}, a_{k-2}) for k = 1..h
    """
    a = np.asarray(a, dtype=float)
    lag1 = np.zeros(h)
    lag2 = np.zeros(h)
    if h > 1:
        lag1[1:] = a[: h - 1]
    if h > 2:
        lag2[2:] = a[: h - 2]
    return lag1, lag2


def lagged_confounders(c: np.ndarray, h: int) -> np.ndarray:
    """Confounder C_{k-1} feeding outcome k, zero for k = 1."""
    c = np.asarray(c, dtype=float)
    lag = np.zeros(h)
    if h > 1:
        lag[1:] = c[: h - 1]
    return lag


def design_matrices(params: "ScmParams", a: np.ndarray, c: np.ndarray) -> DesignMatrices:
    """
    Build Z and the fixed-effect mean for an observed exposure/confounder path.

    Args:
        params: Model parameters (mu, betas, beta_c)
        a: Exposures 1..h
        c: Confounders 1..h

    Returns:
        DesignMatrices for outcome times 1..h
    """
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if a.shape != c.shape:
        raise DimensionError(f"Exposure length {a.size} differs from confounder length {c.size}")
    h = a.size
    lag1, lag2 = lagged_exposures(a, h)
    c_lag = lagged_confounders(c, h)
    z = np.column_stack([np.ones(h), lag1, lag2])
    mu_y = params.mu + params.beta_c * c_lag + params.beta1 * lag1 + params.beta2 * lag2
    return DesignMatrices(z=z, mu_y=mu_y)


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """
    Return L with L @ L.T == cov for a positive semidefinite matrix.

    Cholesky is used when it succeeds; singular matrices fall back to a
    symmetric eigen-decomposition with negative rounding noise clipped.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.size == 0:
        return cov.copy()
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        values, vectors = np.linalg.eigh(0.5 * (cov + cov.T))
        return vectors * np.sqrt(np.clip(values, 0.0, None))


def jittered_cho_factor(matrix: np.ndarray) -> Tuple[Tuple[np.ndarray, bool], float]:
    """
    Cholesky-factor a covariance block, climbing the jitter ladder on failure.

    Args:
        matrix: Symmetric matrix expected to be positive definite

    Returns:
        Tuple of (scipy cho_factor result, jitter added to the diagonal)

    Raises:
        NumericalSingularityError: if every rung of the ladder fails
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    dim = matrix.shape[0]
    scale = max(float(np.trace(matrix)) / max(dim, 1), np.finfo(float).tiny)
    for rung in JITTER_LADDER:
        jitter = rung * scale
        try:
            factor = linalg.cho_factor(matrix + jitter * np.eye(dim), lower=True, check_finite=True)
        except (linalg.LinAlgError, ValueError):
            continue
        if jitter > 0:
            logger.warning(f"Covariance block needed jitter {jitter:.3e} to factorize")
        return factor, jitter
    raise NumericalSingularityError(f"Covariance block of dimension {dim} is singular beyond jitter tolerance")


def build_marginal_moments(params: "ScmParams", a: np.ndarray, c: np.ndarray) -> MvnDist:
    """
    Joint law of (U0, U1, U2, Y_1..Y_h) given exposures and confounders.

    The covariance is assembled from the generative construction
    [[S, S Z^T], [Z S, Z S Z^T + sigma^2 I]] with S the latent covariance.

    Args:
        params: Model parameters (log-scale parameters for the log-normal kind)
        a: Exposures 1..h
        c: Confounders 1..h

    Returns:
        MvnDist of dimension 3 + h
    """
    design = design_matrices(params, a, c)
    sigma_u = params.latent_cov
    h = design.mu_y.size
    z = design.z
    cross = sigma_u @ z.T
    cov = np.zeros((3 + h, 3 + h))
    cov[:3, :3] = sigma_u
    cov[:3, 3:] = cross
    cov[3:, :3] = cross.T
    cov[3:, 3:] = z @ sigma_u @ z.T + params.sigma ** 2 * np.eye(h)
    mean = np.concatenate([np.zeros(3), design.mu_y])
    return MvnDist(mean, cov)


def condition_gaussian(joint: MvnDist, observed_idx: Sequence[int], observed_values: Sequence[float]) -> MvnDist:
    """
    Condition a Gaussian on some of its coordinates.

    Uses the Schur complement with Cholesky solves on the observed block;
    the block is never inverted explicitly.

    Args:
        joint: Joint law
        observed_idx: Indices of the observed coordinates
        observed_values: Observed values, aligned with ``observed_idx``

    Returns:
        Law of the unobserved coordinates (in their original order). When
        every coordinate is observed, the point mass at the observed values.
    """
    observed_idx = np.asarray(observed_idx, dtype=int)
    observed_values = np.asarray(observed_values, dtype=float)
    if observed_idx.shape != observed_values.shape:
        raise DimensionError("Observed indices and values differ in length")
    if observed_idx.size and (observed_idx.min() < 0 or observed_idx.max() >= joint.dim):
        raise DimensionError(f"Observed index out of range for a {joint.dim}-dimensional law")
    free_idx = np.setdiff1d(np.arange(joint.dim), observed_idx)

    if observed_idx.size == 0:
        return joint
    if free_idx.size == 0:
        values = np.empty(joint.dim)
        values[observed_idx] = observed_values
        return MvnDist(values, np.zeros((joint.dim, joint.dim)))

    s11 = joint.cov[np.ix_(free_idx, free_idx)]
    s12 = joint.cov[np.ix_(free_idx, observed_idx)]
    s22 = joint.cov[np.ix_(observed_idx, observed_idx)]
    factor, _ = jittered_cho_factor(s22)

    residual = observed_values - joint.mean[observed_idx]
    mean = joint.mean[free_idx] + s12 @ linalg.cho_solve(factor, residual)
    cov = s11 - s12 @ linalg.cho_solve(factor, s12.T)
    cov = 0.5 * (cov + cov.T)
    # Rounding can leave tiny negative diagonal entries on fully determined coordinates
    diag = np.diag(cov).copy()
    np.fill_diagonal(cov, np.clip(diag, 0.0, None))
    return MvnDist(mean, cov)


def std_normal_cdf(x):
    """Standard normal CDF through the complementary error function."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


# Gauss-Legendre half-tables (6, 12 and 20 points) used by the bivariate routine
_GL_TABLES = {
    3: (
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    ),
    6: (
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    ),
    10: (
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
    ),
}


def _phi(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def bvn_upper(dh: float, dk: float, r: float) -> float:
    """
    P(X > dh, Y > dk) for a standard bivariate normal with correlation r.

    Drezner-Wesolowsky Gauss-Legendre scheme in the double-precision form
    published by A. Genz, with |r|-dependent node counts and the
    near-singular expansion for |r| >= 0.925.
    """
    if dh == math.inf or dk == math.inf:
        return 0.0
    if dh == -math.inf:
        return 1.0 if dk == -math.inf else _phi(-dk)
    if dk == -math.inf:
        return _phi(-dh)
    if r == 0.0:
        return _phi(-dh) * _phi(-dk)

    if abs(r) < 0.3:
        w, x = _GL_TABLES[3]
    elif abs(r) < 0.75:
        w, x = _GL_TABLES[6]
    else:
        w, x = _GL_TABLES[10]
    w = np.concatenate([w, w])
    x = np.concatenate([1.0 - x, 1.0 + x])

    tp = 2.0 * math.pi
    h, k = dh, dk
    hk = h * k
    bvn = 0.0
    if abs(r) < 0.925:
        hs = (h * h + k * k) / 2.0
        asr = math.asin(r) / 2.0
        sn = np.sin(asr * x)
        bvn = float(np.sum(w * np.exp((sn * hk - hs) / (1.0 - sn ** 2))))
        bvn = bvn * asr / tp + _phi(-h) * _phi(-k)
    else:
        if r < 0:
            k = -k
            hk = -hk
        if abs(r) < 1.0:
            a_s = (1.0 - r) * (1.0 + r)
            a = math.sqrt(a_s)
            bs = (h - k) ** 2
            asr = -(bs / a_s + hk) / 2.0
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            if asr > -100.0:
                bvn = a * math.exp(asr) * (1.0 - c * (bs - a_s) * (1.0 - d * bs) / 3.0 + c * d * a_s * a_s)
            if hk > -100.0:
                b = math.sqrt(bs)
                sp = math.sqrt(tp) * _phi(-b / a)
                bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
            a = a / 2.0
            xs = (a * x) ** 2
            asr_v = -(bs / xs + hk) / 2.0
            keep = asr_v > -100.0
            xs = xs[keep]
            sp_v = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hk / 2.0) * xs / (1.0 + rs) ** 2) / rs
            bvn = (a * float(np.sum(np.exp(asr_v[keep]) * (sp_v - ep) * w[keep])) - bvn) / tp
        if r > 0:
            bvn += _phi(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            if h < 0:
                lower = _phi(k) - _phi(h)
            else:
                lower = _phi(-h) - _phi(-k)
            bvn = lower - bvn
    return min(1.0, max(0.0, bvn))


def _interval_prob(lo: float, hi: float) -> float:
    """P(lo < Z < hi) for a standard normal Z."""
    if lo <= 0.0:
        return _phi(hi) - _phi(lo)
    # Upper tail differences keep precision for large positive bounds
    return _phi(-lo) - _phi(-hi)


def bvn_rect_prob(mean: Sequence[float], cov: np.ndarray, lower: Sequence[float], upper: Sequence[float]) -> float:
    """
    Probability that a bivariate Gaussian falls in the rectangle [lower, upper].

    Args:
        mean: 2-vector
        cov: 2x2 positive semidefinite covariance
        lower: Lower bounds (-inf allowed)
        upper: Upper bounds (+inf allowed)

    Returns:
        Rectangle probability in [0, 1]
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if mean.shape != (2,) or cov.shape != (2, 2) or lower.shape != (2,) or upper.shape != (2,):
        raise DimensionError("bvn_rect_prob expects 2-vectors and a 2x2 covariance")
    if np.any(np.isnan(lower)) or np.any(np.isnan(upper)) or np.any(lower > upper):
        raise DomainError(f"Invalid rectangle bounds {lower.tolist()} .. {upper.tolist()}")
    MvnDist(mean, cov)

    sd = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    degenerate = sd <= 1e-300
    if degenerate.all():
        inside = np.all((mean > lower) & (mean <= upper))
        return 1.0 if inside else 0.0
    if degenerate.any():
        point, free = (0, 1) if degenerate[0] else (1, 0)
        if not (lower[point] < mean[point] <= upper[point]):
            return 0.0
        lo = (lower[free] - mean[free]) / sd[free]
        hi = (upper[free] - mean[free]) / sd[free]
        return max(0.0, _interval_prob(lo, hi))

    lo = (lower - mean) / sd
    hi = (upper - mean) / sd
    r = float(np.clip(cov[0, 1] / (sd[0] * sd[1]), -1.0, 1.0))
    prob = (
        bvn_upper(lo[0], lo[1], r)
        - bvn_upper(hi[0], lo[1], r)
        - bvn_upper(lo[0], hi[1], r)
        + bvn_upper(hi[0], hi[1], r)
    )
    return min(1.0, max(0.0, prob))


def gauss_hermite_nodes(order: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Probabilists' Gauss-Hermite rule for the standard normal.

    Args:
        order: Number of nodes, between 2 and 64

    Returns:
        Tuple (nodes, weights) with weights summing to 1
    """
    if not MIN_QUADRATURE_ORDER <= int(order) <= MAX_QUADRATURE_ORDER:
        raise DomainError(f"Quadrature order {order} outside [{MIN_QUADRATURE_ORDER}, {MAX_QUADRATURE_ORDER}]")
    nodes, weights = np.polynomial.hermite_e.hermegauss(int(order))
    return nodes, weights / math.sqrt(2.0 * math.pi)


def tensor_nodes(dist: MvnDist, order: int = DEFAULT_QUADRATURE_ORDER) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tensor-product quadrature points and weights for a Gaussian law.

    Args:
        dist: Gaussian to integrate against
        order: Nodes per dimension

    Returns:
        Tuple (points of shape (order**dim, dim), weights of shape (order**dim,))
    """
    nodes, weights = gauss_hermite_nodes(order)
    dim = dist.dim
    if order ** dim > 2_000_000:
        logger.warning(f"Tensor quadrature with {order ** dim} points; consider a lower order")
    factor = psd_factor(dist.cov)
    grid = np.array(list(itertools.product(nodes, repeat=dim)))
    grid_weights = np.prod(np.array(list(itertools.product(weights, repeat=dim))), axis=1)
    points = dist.mean + grid @ factor.T
    return points, grid_weights


def mvn_quadrature(dist: MvnDist, f: Callable[[np.ndarray], np.ndarray], order: int = DEFAULT_QUADRATURE_ORDER):
    """
    Expectation of ``f`` under a Gaussian by tensor-product Gauss-Hermite quadrature.

    Args:
        dist: Gaussian law (covariance may be singular)
        f: Vectorized integrand mapping an (N, dim) array to (N,) or (N, ...)
        order: Nodes per dimension

    Returns:
        Approximation of E[f(X)]
    """
    points, weights = tensor_nodes(dist, order)
    values = np.asarray(f(points), dtype=float)
    return np.tensordot(weights, values, axes=(0, 0))
