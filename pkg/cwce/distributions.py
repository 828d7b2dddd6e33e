"""
Cross-world causal effect distributions.

A CWCE is one of four laws: a Gaussian, a density tabulated on a grid, a
pmf on {-1, 0, +1} or a point mass. All four share mean/mode/cdf and a
{"kind": ...} dictionary form used for CSV/JSON artifacts.
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid

from cwce.errors import DomainError

GRID_NORMALIZATION_TOL = 1e-6
PMF_TOL = 1e-12


class CwceDistribution:
    """Common interface of the CWCE laws."""

    kind: str = ""

    def mean(self) -> float:
        raise NotImplementedError

    def variance(self) -> float:
        raise NotImplementedError

    def mode(self) -> float:
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    @staticmethod
    def from_dict(payload: Dict[str, Any]) -> "CwceDistribution":
        """Rebuild a distribution from its dictionary form."""
        kind = payload.get("kind")
        if kind == Gaussian.kind:
            return Gaussian(float(payload["mean"]), float(payload["var"]))
        if kind == Grid.kind:
            return Grid(np.asarray(payload["points"], dtype=float), np.asarray(payload["density"], dtype=float))
        if kind == Discrete.kind:
            return Discrete(float(payload["p_minus1"]), float(payload["p_0"]), float(payload["p_plus1"]))
        if kind == Degenerate.kind:
            return Degenerate(float(payload["value"]))
        raise DomainError(f"Unknown distribution kind: {kind!r}")


@dataclass(frozen=True)
class Gaussian(CwceDistribution):
    """Normal law N(mean, var)."""

    loc: float
    var: float
    kind = "gaussian"

    def __post_init__(self):
        if not math.isfinite(self.loc) or not math.isfinite(self.var):
            raise DomainError(f"Non-finite Gaussian moments ({self.loc}, {self.var})")
        if self.var < 0:
            raise DomainError(f"Gaussian variance must be >= 0, got {self.var}")

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def mean(self) -> float:
        return self.loc

    def variance(self) -> float:
        return self.var

    def mode(self) -> float:
        return self.loc

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.var == 0:
            return (x >= self.loc).astype(float)
        return stats.norm.cdf(x, loc=self.loc, scale=self.sd)

    def pdf(self, x):
        if self.var == 0:
            raise DomainError("Density of a zero-variance Gaussian is undefined")
        return stats.norm.pdf(np.asarray(x, dtype=float), loc=self.loc, scale=self.sd)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "mean": self.loc, "var": self.var}


@dataclass(frozen=True)
class Grid(CwceDistribution):
    """Density tabulated on sorted points, normalized under the trapezoid rule."""

    points: np.ndarray
    density: np.ndarray
    kind = "grid"

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if points.ndim != 1 or points.size < 2:
            raise DomainError("Grid needs at least two points")
        if density.shape != points.shape:
            raise DomainError("Grid points and density differ in length")
        if np.any(np.diff(points) <= 0):
            raise DomainError("Grid points must be strictly increasing")
        if np.any(~np.isfinite(density)) or np.any(density < 0):
            raise DomainError("Grid density must be finite and non-negative")
        mass = trapezoid(density, points)
        if abs(mass - 1.0) > GRID_NORMALIZATION_TOL:
            raise DomainError(f"Grid density integrates to {mass}, not 1")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "density", density)

    @classmethod
    def normalized(cls, points: Sequence[float], density: Sequence[float]) -> "Grid":
        """Build a Grid after rescaling ``density`` to unit trapezoid mass."""
        points = np.asarray(points, dtype=float)
        density = np.clip(np.asarray(density, dtype=float), 0.0, None)
        mass = trapezoid(density, points)
        if not mass > 0 or not math.isfinite(mass):
            raise DomainError("Grid density has no mass to normalize")
        return cls(points, density / mass)

    def mean(self) -> float:
        return float(trapezoid(self.points * self.density, self.points))

    def variance(self) -> float:
        centre = self.mean()
        return float(max(0.0, trapezoid((self.points - centre) ** 2 * self.density, self.points)))

    def mode(self) -> float:
        return float(self.points[int(np.argmax(self.density))])

    def pdf(self, x):
        return np.interp(np.asarray(x, dtype=float), self.points, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        cumulative = cumulative_trapezoid(self.density, self.points, initial=0.0)
        cumulative = cumulative / cumulative[-1]
        return np.interp(np.asarray(x, dtype=float), self.points, cumulative, left=0.0, right=1.0)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "points": self.points.tolist(), "density": self.density.tolist()}


@dataclass(frozen=True)
class Discrete(CwceDistribution):
    """pmf of a binary-outcome ICE on {-1, 0, +1}."""

    p_minus1: float
    p_0: float
    p_plus1: float
    kind = "discrete"

    def __post_init__(self):
        probs = np.array([self.p_minus1, self.p_0, self.p_plus1], dtype=float)
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise DomainError(f"Invalid pmf {probs.tolist()}")
        if abs(probs.sum() - 1.0) > PMF_TOL:
            raise DomainError(f"pmf sums to {probs.sum()}, not 1")

    @classmethod
    def normalized(cls, p_minus1: float, p_0: float, p_plus1: float) -> "Discrete":
        probs = np.clip(np.array([p_minus1, p_0, p_plus1], dtype=float), 0.0, None)
        total = probs.sum()
        if total <= 0:
            raise DomainError("pmf has no mass to normalize")
        probs = probs / total
        # Put the rounding remainder on the largest cell so the sum is exact
        probs[int(np.argmax(probs))] += 1.0 - probs.sum()
        return cls(*map(float, probs))

    @property
    def support(self) -> np.ndarray:
        return np.array([-1.0, 0.0, 1.0])

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.p_minus1, self.p_0, self.p_plus1])

    def prob(self, value: int) -> float:
        return {-1: self.p_minus1, 0: self.p_0, 1: self.p_plus1}[int(value)]

    def mean(self) -> float:
        return self.p_plus1 - self.p_minus1

    def variance(self) -> float:
        return self.p_plus1 + self.p_minus1 - self.mean() ** 2

    def mode(self) -> float:
        """Most probable category; ties go to 0, then to -1 over +1."""
        best = 0
        for value in (-1, 1):
            if self.prob(value) > self.prob(best):
                best = value
        return float(best)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return (
            self.p_minus1 * (x >= -1.0)
            + self.p_0 * (x >= 0.0)
            + self.p_plus1 * (x >= 1.0)
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "p_minus1": self.p_minus1, "p_0": self.p_0, "p_plus1": self.p_plus1}


@dataclass(frozen=True)
class Degenerate(CwceDistribution):
    """Point mass."""

    value: float
    kind = "degenerate"

    def mean(self) -> float:
        return self.value

    def variance(self) -> float:
        return 0.0

    def mode(self) -> float:
        return self.value

    def cdf(self, x):
        return (np.asarray(x, dtype=float) >= self.value).astype(float)

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "value": self.value}
