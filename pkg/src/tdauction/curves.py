"""Discount curves d(t) on a finite horizon.

A curve maps time in ``[0, T]`` to a multiplier in ``(0, 1]`` that scales a
buyer's initial valuation.  Six presets are provided (``D1`` .. ``D6``) plus
piecewise-constant tables and arbitrary callables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument falls outside an operation's domain."""


PRESETS = ("D1", "D2", "D3", "D4", "D5", "D6")


@dataclass(frozen=True)
class DiscountCurve:
    """An evaluable discount function.

    Attributes:
        kind: ``D1``..``D6``, ``table`` or ``custom``.
        horizon: Time horizon ``T``.
        params: Preset-specific scalars (``rate`` for D5, ``n``/``rate``/``eps``
            for D6).
        samples: For step curves, ``(t_end, value)`` pairs.  The curve takes
            ``value[0]`` on ``[0, t_end[0]]`` and ``value[i]`` on
            ``(t_end[i-1], t_end[i]]``; past the last breakpoint it keeps the
            last value.
        non_increasing: Monotonicity flag, checked by :meth:`check_monotone`.
    """

    kind: str
    horizon: float
    params: dict = field(default_factory=dict)
    samples: tuple[tuple[float, float], ...] | None = None
    non_increasing: bool = True
    func: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, compare=False, repr=False
    )

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.kind == "table":
            if not self.samples:
                raise ValueError("table curve needs samples")
            ends = [s[0] for s in self.samples]
            if any(b <= a for a, b in zip(ends, ends[1:])):
                raise ValueError("table breakpoints must be strictly increasing")
        elif self.kind == "custom":
            if self.func is None:
                raise ValueError("custom curve needs func")
        elif self.kind not in PRESETS:
            raise ValueError(f"unknown curve kind {self.kind!r}")

    # -- evaluation ---------------------------------------------------------

    def values(self, t) -> np.ndarray:
        """Vectorised evaluation without domain checks."""
        t = np.asarray(t, dtype=float)
        T = self.horizon
        k = self.kind
        if k == "D1":
            return 1.0 - t / T
        if k == "D2":
            # exp(-4(t-1)/(T-1)) exceeds 1 for t < 1; capped to keep d <= 1.
            return np.minimum(1.0, np.exp(-4.0 * (t - 1.0) / (T - 1.0)))
        if k == "D3":
            return np.power(0.99, t)
        if k == "D4":
            return np.ones_like(t)
        if k == "D5":
            # sqrt((lam*T)^2 - (lam*t)^2) / (lam*T): time counted in expected arrivals.
            return np.sqrt(np.clip(1.0 - (t / T) ** 2, 0.0, None))
        if k in ("D6", "table"):
            ends, vals = self._table()
            idx = np.searchsorted(ends, t, side="left")
            idx = np.minimum(idx, len(vals) - 1)
            return vals[idx]
        return np.asarray(self.func(t), dtype=float)

    def __call__(self, t: float) -> float:
        if t < 0 or t > self.horizon * (1 + 1e-12):
            raise DomainError(f"t={t} outside [0, {self.horizon}]")
        return float(self.values(t))

    def _table(self) -> tuple[np.ndarray, np.ndarray]:
        cache = self.__dict__.get("_table_cache")
        if cache is None:
            if self.kind == "D6":
                samples = _halving_steps(
                    int(self.params["n"]),
                    float(self.params.get("rate", 1.0)),
                    float(self.params.get("eps", 1e-9)),
                )
            else:
                samples = self.samples
            ends = np.array([s[0] for s in samples], dtype=float)
            vals = np.array([s[1] for s in samples], dtype=float)
            cache = (ends, vals)
            object.__setattr__(self, "_table_cache", cache)
        return cache

    # -- geometry helpers ---------------------------------------------------

    @property
    def is_step(self) -> bool:
        return self.kind in ("D6", "table")

    def breakpoints(self) -> np.ndarray:
        """Segment end times for step curves."""
        if not self.is_step:
            raise ValueError("only step curves expose breakpoints")
        return self._table()[0]

    def d_max(self) -> float:
        """Largest value of the curve on ``[0, T]``."""
        if self.is_step:
            ends, vals = self._table()
            live = np.concatenate([[True], ends[:-1] < self.horizon])
            return float(vals[live].max())
        if self.non_increasing:
            return float(self.values(0.0))
        return float(self.values(np.linspace(0, self.horizon, 10001)).max())

    def first_time_at_or_below(self, y: float, tol: float | None = None) -> float:
        """``inf{t in [0, T] : d(t) <= y}`` for a non-increasing curve.

        Returns ``T`` when the curve never drops to ``y``.  Step curves answer
        from their breakpoints; everything else bisects to ``1e-9 * T``.
        """
        T = self.horizon
        if self.is_step:
            ends, vals = self._table()
            starts = np.concatenate([[0.0], ends[:-1]])
            for s, v in zip(starts, vals):
                if s >= T:
                    break
                if v <= y:
                    return float(s)
            return T
        if float(self.values(0.0)) <= y:
            return 0.0
        if float(self.values(T)) > y:
            return T
        lo, hi = 0.0, T
        tol = 1e-9 * T if tol is None else tol
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if float(self.values(mid)) <= y:
                hi = mid
            else:
                lo = mid
        return hi

    def check_monotone(self, samples: int = 10001) -> bool:
        """Dense-sampling check of the non-increasing flag."""
        v = self.values(np.linspace(0.0, self.horizon, samples))
        return bool(np.all(np.diff(v) <= 1e-15))

    def has_nonincreasing_density(self, B: float, samples: int = 200) -> bool:
        """Check ``t(d/B) - t(d)`` is non-decreasing in ``d`` (diagnostic only)."""
        lo = max(float(self.values(self.horizon)), 1e-300)
        ds = np.geomspace(max(lo, self.d_max() * 1e-12), self.d_max(), samples)
        gaps = np.array(
            [self.first_time_at_or_below(d / B) - self.first_time_at_or_below(d) for d in ds]
        )
        return bool(np.all(np.diff(gaps) >= -1e-9 * self.horizon))

    # -- serialisation ------------------------------------------------------

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom curves cannot be serialised")
        out = {"kind": self.kind, "horizon": self.horizon, "params": dict(self.params)}
        if self.samples is not None:
            out["samples"] = [list(s) for s in self.samples]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "DiscountCurve":
        samples = data.get("samples")
        return cls(
            kind=data["kind"],
            horizon=float(data["horizon"]),
            params=dict(data.get("params", {})),
            samples=tuple((float(a), float(b)) for a, b in samples) if samples else None,
        )


def _halving_steps(n: int, rate: float, eps: float) -> list[tuple[float, float]]:
    # d = 2^-(c-1) on (t_{2c-2}, t_{2c}] for c = 1..log2(n), eps afterwards.
    classes = max(1, math.ceil(math.log2(n))) if n > 1 else 1
    steps = [(2 * c / rate, 2.0 ** -(c - 1)) for c in range(1, classes + 1)]
    steps.append((math.inf, eps))
    return steps


def preset(name: str, horizon: float = 2000.0, rate: float = 1.0, **params) -> DiscountCurve:
    """Build one of the evaluation curves D1..D6.

    ``rate`` is the arrival rate; it only matters for D6 (whose steps sit on
    the expected arrival grid) and is recorded for D5.
    """
    name = name.upper()
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    if name == "D6":
        n = int(params.pop("n", round(rate * horizon)))
        eps = float(params.pop("eps", 1e-9))
        return DiscountCurve("D6", horizon, {"n": n, "rate": rate, "eps": eps})
    if name == "D5":
        return DiscountCurve("D5", horizon, {"rate": rate})
    return DiscountCurve(name, horizon)


def step_curve(horizon: float, steps: Sequence[tuple[float, float]]) -> DiscountCurve:
    """Piecewise-constant curve from ``(t_end, value)`` pairs."""
    return DiscountCurve("table", horizon, samples=tuple((float(a), float(b)) for a, b in steps))


def custom_curve(
    horizon: float, func: Callable[[np.ndarray], np.ndarray], non_increasing: bool = True
) -> DiscountCurve:
    return DiscountCurve("custom", horizon, func=func, non_increasing=non_increasing)
