"""Instance generators: evaluation draws and the adversarial constructions."""

from __future__ import annotations

import math

import numpy as np

from .curves import DiscountCurve, preset, step_curve
from .distributions import extreme_values, preset_distribution
from .market import MarketInstance, grid_arrivals

INSTANCE_PRESETS = ("single-needle", "wide-needle", "nested", "halving", "low-first", "two-slot", "two-class")


def _grid(n: int, rate: float) -> tuple[np.ndarray, float]:
    horizon = n / rate
    return np.arange(1, n + 1, dtype=float) / rate, horizon


def _two_level(n, rate, split, hi, lo) -> DiscountCurve:
    # hi on the first `split` grid slots, lo afterwards
    return step_curve(n / rate, [(split / rate, hi), (math.inf, lo)])


def _needle_values(n: int, v1: float, v2: float, rest: float) -> np.ndarray:
    v = np.full(n, float(rest))
    v[0], v[1] = v1, v2
    return v


def single_slot_needle(n: int, k: float = 5, K: float | None = None, delta: float | None = None,
                  rate: float = 1.0) -> MarketInstance:
    """``d = 1`` on the first slot and ``n**-k`` afterwards.

    Valuations ``K n^k - delta``, ``K`` and ``n - 2`` copies of ``delta``.
    """
    if n < 3:
        raise ValueError("single-needle instance needs n >= 3")
    if k < 5:
        raise ValueError("single-needle instance needs k >= 5")
    K = float(n) ** 2 if K is None else K
    delta = float(n) ** -k if delta is None else delta
    curve = _two_level(n, rate, 1, 1.0, float(n) ** -k)
    t, T = _grid(n, rate)
    return MarketInstance(_needle_values(n, K * n**k - delta, K, delta), t, curve, rate, T)


def wide_needle(n: int, x: int, k: float = 5, K: float | None = None,
                  delta: float | None = None, rate: float = 1.0) -> MarketInstance:
    """``d = 1`` on the first ``x`` slots and ``n**-k`` afterwards.

    Valuations ``n^k (K - delta)``, ``K`` and ``n - 2`` copies of ``delta``.
    """
    if not 2 <= x <= n:
        raise ValueError(f"x must lie in [2, n], got {x}")
    K = float(n) ** 2 if K is None else K
    delta = float(n) ** -k if delta is None else delta
    curve = _two_level(n, rate, x, 1.0, float(n) ** -k)
    t, T = _grid(n, rate)
    return MarketInstance(_needle_values(n, n**k * (K - delta), K, delta), t, curve, rate, T)


def nested_curve(c: int, rate: float = 1.0) -> DiscountCurve:
    L = c
    n = L ** (4 * c)
    steps = [(L ** (2 * t) / rate, float(L) ** -t) for t in range(1, 2 * c + 1)]
    return step_curve(n / rate, steps)


def nested_family(c: int, t: int, K: float | None = None, rate: float = 1.0) -> MarketInstance:
    """Member ``t`` of the nested family with ``n = c**(4c)`` buyers.

    The curve is ``c**-s`` on slots ``(c**(2(s-1)), c**(2s)]``.  Member ``t``
    has ``n/n_j - n/n_{j+1}`` copies of ``K**j`` for ``j < t``, ``n/n_t``
    copies of ``K**t`` and zeros elsewhere, with ``n_j = c**(2j)``.
    """
    if c < 2:
        raise ValueError("family needs c >= 2 (c = 1 gives a single buyer)")
    if not 1 <= t <= 2 * c:
        raise ValueError(f"member t must lie in [1, {2 * c}], got {t}")
    L = c
    n = L ** (4 * c)
    K = float(n) ** 3 if K is None else K
    nt = [L ** (2 * s) for s in range(0, 2 * c + 1)]
    vals = []
    for j in range(1, t):
        vals += [K**j] * (n // nt[j] - n // nt[j + 1])
    vals += [K**t] * (n // nt[t])
    vals += [0.0] * (n - len(vals))
    vals.sort(reverse=True)
    tt, T = _grid(n, rate)
    return MarketInstance(np.array(vals, dtype=float), tt, nested_curve(c, rate), rate, T)


def halving_needle(n: int, eps: float | None = None, rate: float = 1.0) -> MarketInstance:
    """Halving steps two slots wide, then ``eps``; valuations ``{n^4, n, 0...}``.

    ``eps`` defaults to ``min(1e-9, n**-5)`` so that ``n^4 * eps`` stays
    below every undiscounted price.
    """
    if n < 2:
        raise ValueError("halving instance needs n >= 2")
    eps = min(1e-9, float(n) ** -5) if eps is None else eps
    t, T = _grid(n, rate)
    curve = preset("D6", horizon=T, rate=rate, n=n, eps=eps)
    return MarketInstance(extreme_values(n), t, curve, rate, T)


def low_first_class(n: int, k: float = 5, B: float = 2.0, K: float | None = None,
                  delta: float | None = None, rate: float = 1.0) -> MarketInstance:
    """``d = 1/B`` on two slots, ``n**-k`` afterwards; ``v1 = n^k K + delta``."""
    if n < 3:
        raise ValueError("low-first instance needs n >= 3")
    K = float(n) ** 2 if K is None else K
    delta = float(n) ** -k if delta is None else delta
    curve = _two_level(n, rate, 2, 1.0 / B, float(n) ** -k)
    t, T = _grid(n, rate)
    return MarketInstance(_needle_values(n, n**k * K + delta, K, delta), t, curve, rate, T)


def two_slot_needle(n: int, k: float = 5, K: float | None = None, delta: float | None = None,
                  rate: float = 1.0) -> MarketInstance:
    """``d = 1`` on two slots, ``n**-k`` afterwards; ``v1 = K n^k - delta``."""
    if n < 3:
        raise ValueError("two-slot instance needs n >= 3")
    K = float(n) ** 2 if K is None else K
    delta = float(n) ** -k if delta is None else delta
    curve = _two_level(n, rate, 2, 1.0, float(n) ** -k)
    t, T = _grid(n, rate)
    return MarketInstance(_needle_values(n, K * n**k - delta, K, delta), t, curve, rate, T)


def two_class(n: int, K: float = 10.0, B: float = 2.0, rate: float = 1.0) -> MarketInstance:
    """``d = 1`` on two slots, ``1/B`` afterwards; valuations ``{BK+1, K, 0...}``."""
    if n < 3:
        raise ValueError("two-class instance needs n >= 3")
    curve = _two_level(n, rate, 2, 1.0, 1.0 / B)
    t, T = _grid(n, rate)
    return MarketInstance(_needle_values(n, B * K + 1, K, 0.0), t, curve, rate, T)


def make_preset_instance(name: str, **params) -> MarketInstance:
    """Build an adversarial instance by id (see ``INSTANCE_PRESETS``)."""
    builders = {
        "single-needle": single_slot_needle,
        "wide-needle": wide_needle,
        "nested": nested_family,
        "halving": halving_needle,
        "low-first": low_first_class,
        "two-slot": two_slot_needle,
        "two-class": two_class,
    }
    key = name.lower()
    if key not in builders:
        raise ValueError(f"unknown instance preset {name!r}; expected one of {INSTANCE_PRESETS}")
    if key == "nested" and "n" in params:
        n = int(params.pop("n"))
        c = next((c for c in range(2, 8) if c ** (4 * c) == n), None)
        if c is None:
            raise ValueError(f"n={n} is not of the form c**(4c); valid sizes are 256, 531441, ...")
        params.setdefault("c", c)
        params.setdefault("t", 1)
    return builders[key](**params)


def sample_valuations(dist: str, n: int, seed=None) -> np.ndarray:
    """I.i.d. draws from an evaluation law; ``Ext`` returns its fixed multiset."""
    if n < 1:
        raise ValueError("n must be positive")
    if dist.lower() == "ext":
        return extreme_values(n) if n >= 2 else np.array([1.0])
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return preset_distribution(dist).sample(rng, n)


def sample_arrivals(rate: float, horizon: float, mode: str = "grid", seed=None) -> np.ndarray:
    """Arrival times on ``(0, horizon]``: the grid ``j / rate`` or a Poisson process."""
    if not rate > 0:
        raise ValueError("rate must be positive")
    if mode == "grid":
        return grid_arrivals(rate, horizon)
    if mode != "poisson":
        raise ValueError("mode must be 'grid' or 'poisson'")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    count = rng.poisson(rate * horizon)
    t = np.sort(rng.uniform(0.0, horizon, count))
    # equal draws are a measure-zero event; drop them to keep times strictly increasing
    return t[np.concatenate([[True], np.diff(t) > 0])] if t.size else t
