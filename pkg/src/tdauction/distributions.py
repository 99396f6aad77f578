"""Valuation distributions with the handful of operations the mechanisms need."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

FAMILIES = ("uniform", "normal", "exponential", "empirical")


@dataclass(frozen=True)
class ValuationDistribution:
    """A non-negative valuation law.

    ``normal`` is clipped at 0: the negative tail becomes an atom at 0.
    ``empirical`` is the uniform law on a finite multiset of values.
    """

    family: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        p = self.params
        if self.family == "uniform" and not p["hi"] > p["lo"] >= 0:
            raise ValueError("uniform needs 0 <= lo < hi")
        if self.family == "normal" and not p["sigma"] > 0:
            raise ValueError("normal needs sigma > 0")
        if self.family == "exponential" and not p["rate"] > 0:
            raise ValueError("exponential needs rate > 0")
        if self.family == "empirical":
            vals = np.sort(np.asarray(p["values"], dtype=float))
            if vals.size == 0 or vals[0] < 0:
                raise ValueError("empirical needs non-negative values")
            object.__setattr__(self, "_sorted", vals)

    # -- constructors -------------------------------------------------------

    @classmethod
    def uniform(cls, lo: float = 0.0, hi: float = 1.0):
        return cls("uniform", {"lo": float(lo), "hi": float(hi)})

    @classmethod
    def normal(cls, mu: float, sigma: float):
        return cls("normal", {"mu": float(mu), "sigma": float(sigma)})

    @classmethod
    def exponential(cls, rate: float):
        return cls("exponential", {"rate": float(rate)})

    @classmethod
    def empirical(cls, values):
        return cls("empirical", {"values": tuple(float(v) for v in values)})

    # -- law ----------------------------------------------------------------

    @property
    def support(self) -> tuple[float, float]:
        """Bounds that carry all but a negligible amount of mass."""
        p = self.params
        if self.family == "uniform":
            return p["lo"], p["hi"]
        if self.family == "normal":
            return max(0.0, p["mu"] - 10 * p["sigma"]), p["mu"] + 10 * p["sigma"]
        if self.family == "exponential":
            return 0.0, 40.0 / p["rate"]
        return float(self._sorted[0]), float(self._sorted[-1])

    @property
    def is_point_mass(self) -> bool:
        return self.family == "empirical" and self._sorted[0] == self._sorted[-1]

    def cdf(self, y):
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.family == "uniform":
            return np.clip((y - p["lo"]) / (p["hi"] - p["lo"]), 0.0, 1.0)
        if self.family == "normal":
            return np.where(y < 0, 0.0, special.ndtr((y - p["mu"]) / p["sigma"]))
        if self.family == "exponential":
            return np.where(y < 0, 0.0, -np.expm1(-p["rate"] * np.maximum(y, 0.0)))
        s = self._sorted
        return np.searchsorted(s, y, side="right") / s.size

    def sf(self, y):
        return 1.0 - self.cdf(y)

    def cdf_scalar(self, y: float) -> float:
        """Fast path of :meth:`cdf` for one float."""
        p = self.params
        if self.family == "uniform":
            return min(1.0, max(0.0, (y - p["lo"]) / (p["hi"] - p["lo"])))
        if y < 0:
            return 0.0
        if self.family == "normal":
            return float(special.ndtr((y - p["mu"]) / p["sigma"]))
        if self.family == "exponential":
            return -math.expm1(-p["rate"] * y)
        return float(self.cdf(y))

    def pdf(self, y):
        """Density of the continuous part (0 for empirical)."""
        y = np.asarray(y, dtype=float)
        p = self.params
        if self.family == "uniform":
            inside = (y >= p["lo"]) & (y <= p["hi"])
            return np.where(inside, 1.0 / (p["hi"] - p["lo"]), 0.0)
        if self.family == "normal":
            z = (y - p["mu"]) / p["sigma"]
            return np.where(y < 0, 0.0, np.exp(-0.5 * z * z) / (p["sigma"] * math.sqrt(2 * math.pi)))
        if self.family == "exponential":
            return np.where(y < 0, 0.0, p["rate"] * np.exp(-p["rate"] * np.maximum(y, 0.0)))
        return np.zeros_like(y)

    def atom_at_zero(self) -> float:
        if self.family == "normal":
            return float(special.ndtr(-self.params["mu"] / self.params["sigma"]))
        if self.family == "empirical":
            return float(self.cdf(0.0))
        return 0.0

    def mean(self) -> float:
        p = self.params
        if self.family == "uniform":
            return 0.5 * (p["lo"] + p["hi"])
        if self.family == "exponential":
            return 1.0 / p["rate"]
        if self.family == "empirical":
            return float(self._sorted.mean())
        mu, s = p["mu"], p["sigma"]
        z = mu / s
        return mu * float(special.ndtr(z)) + s * math.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        p = self.params
        if self.family == "uniform":
            return rng.uniform(p["lo"], p["hi"], n)
        if self.family == "normal":
            return np.maximum(rng.normal(p["mu"], p["sigma"], n), 0.0)
        if self.family == "exponential":
            return rng.exponential(1.0 / p["rate"], n)
        return rng.choice(self._sorted, n)

    def candidates(self) -> np.ndarray | None:
        """Thresholds worth testing for a step CDF (just below each atom)."""
        if self.family != "empirical":
            return None
        u = np.unique(self._sorted)
        return np.concatenate([[0.0], u * (1 - 1e-9)])

    def describe(self) -> str:
        if self.family == "empirical":
            return f"empirical[{len(self._sorted)}]"
        return f"{self.family}(" + ",".join(f"{k}={v:g}" for k, v in self.params.items()) + ")"


def fit_mle(family: str, samples) -> ValuationDistribution:
    """Maximum-likelihood fit; degenerate samples get a widened law.

    Uniform fits ``[0, max]`` (the lower end is pinned at 0, valuations being
    non-negative).
    """
    s = np.asarray(samples, dtype=float)
    if s.size == 0:
        raise ValueError("need at least one sample")
    if family == "uniform":
        hi = float(s.max())
        return ValuationDistribution.uniform(0.0, hi if hi > 0 else 1e-12)
    if family == "normal":
        mu, sd = float(s.mean()), float(s.std())
        return ValuationDistribution.normal(mu, sd if sd > 0 else max(1e-9, 1e-6 * abs(mu)))
    if family == "exponential":
        m = float(s.mean())
        return ValuationDistribution.exponential(1.0 / m if m > 0 else 1e12)
    raise ValueError(f"cannot fit family {family!r}")


def preset_distribution(name: str, n: int | None = None) -> ValuationDistribution:
    """The four evaluation laws: ``Uni``, ``Nor``, ``Exp`` and ``Ext``.

    ``Ext`` is the two-positive-value multiset ``{n**4, n, 0 x (n-2)}``.
    """
    key = name.lower()
    if key in ("uni", "uniform"):
        return ValuationDistribution.uniform(0.0, 200.0)
    if key in ("nor", "normal"):
        return ValuationDistribution.normal(100.0, 20.0)
    if key in ("exp", "exponential"):
        return ValuationDistribution.exponential(1.0 / 50.0)
    if key == "ext":
        if n is None or n < 2:
            raise ValueError("Ext needs n >= 2")
        return ValuationDistribution.empirical(extreme_values(n))
    raise ValueError(f"unknown distribution preset {name!r}")


def extreme_values(n: int) -> np.ndarray:
    v = np.zeros(n)
    v[0], v[1] = float(n) ** 4, float(n)
    return v


DIST_PRESETS = ("Uni", "Nor", "Exp", "Ext")
