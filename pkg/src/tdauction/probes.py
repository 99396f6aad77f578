"""Deviation probes: does misreporting or arriving late pay off for a buyer?"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coins import RandomCoins, enumerate_outcomes
from .market import BidStream, MarketInstance
from .online import Mechanism

DEFAULT_SCALES = (0.5, 0.9, 1.1, 2.0)
DEFAULT_DELAYS = (1, 2)
EXACT_MAX_N = 6

# (mechanism, deviation kind) pairs whose failure counts as a regression
DOCUMENTED_TRUTHFUL = {
    ("vickrey", "scale"), ("vickrey", "delay"),
    ("m_f", "scale"), ("m_f", "delay"),
    ("m_z", "scale"), ("m_z", "delay"),
    ("m_d", "scale"), ("m_t", "scale"),
    ("m_r", "scale"), ("m_r", "delay-within"),
    ("m_1", "scale"), ("m_1", "delay-within"),
    ("m_w", "scale"), ("m_w2", "scale"),
}


@dataclass(frozen=True)
class Deviation:
    """Bid scaling ``factor`` and/or an arrival ``delay`` in slots."""

    factor: float = 1.0
    delay: int = 0

    @property
    def kind(self) -> str:
        if self.delay and self.factor != 1.0:
            return "combined"
        return "delay" if self.delay else "scale"

    def label(self) -> str:
        parts = []
        if self.factor != 1.0:
            parts.append(f"scale={self.factor:g}")
        if self.delay:
            parts.append(f"delay={self.delay}")
        return ",".join(parts) or "truthful"


@dataclass(frozen=True)
class ProbeVerdict:
    mechanism: str
    deviation: Deviation
    target_slot: int
    truthful_utility: float
    deviant_utility: float
    truthful_ci: float
    deviant_ci: float
    diff_ci: float
    verdict: str
    exact: bool
    crosses_class: bool = False

    @property
    def kind(self) -> str:
        k = self.deviation.kind
        if k == "delay" and not self.crosses_class:
            return "delay-within"
        return k


def deviant_stream(
    instance: MarketInstance, order: np.ndarray, target_slot: int, dev: Deviation
) -> tuple[BidStream, int | None, float]:
    """Stream where the buyer at ``target_slot`` deviates.

    ``order[j]`` is the valuation index at slot ``j + 1``.  A delay moves the
    target ``dev.delay`` slots later and shifts the buyers in between one slot
    earlier; past the last slot the target never shows up.  Returns the
    stream, the target's new slot (or ``None``) and its true discounted value
    at that slot.
    """
    n = instance.n
    t = instance.arrivals
    s = target_slot - 1
    new = s + dev.delay
    seq = list(order)
    tgt = seq.pop(s)
    if new < n:
        seq.insert(new, tgt)
        times = t
    else:
        times = t[: n - 1]
        new = None
    v = instance.valuations[np.array(seq, dtype=np.int64)]
    d = instance.curve.values(times)
    prices = v * d
    if new is None:
        return BidStream(times, prices), None, 0.0
    true_val = float(prices[new])
    prices[new] *= dev.factor
    return BidStream(times, prices), new + 1, true_val


def _utility(mech: Mechanism, stream, slot, value, coins) -> float:
    out = mech.run(stream, coins, record=False)
    if slot is None or out.winner != slot:
        return 0.0
    return value - out.payment


def expected_utility(
    mech: Mechanism, stream: BidStream, slot: int | None, value: float
) -> float:
    """Exact expectation over the mechanism's coins."""
    if slot is None:
        return 0.0
    if not getattr(mech, "uses_coins", False):
        return _utility(mech, stream, slot, value, RandomCoins(0))
    outs = enumerate_outcomes(lambda c: _utility(mech, stream, slot, value, c))
    return float(sum(p * u for p, u in outs))


def truthfulness_probe(
    mech: Mechanism,
    instance: MarketInstance,
    target: int = 0,
    target_slot: int = 1,
    deviations: list[Deviation] | None = None,
    exact: bool | None = None,
    reps: int = 2000,
    seed: int = 0,
    class_of: Callable[[float], int] | None = None,
) -> list[ProbeVerdict]:
    """Compare a buyer's expected utility truthful vs deviating.

    The target (valuation index ``target``) sits at ``target_slot``; the
    other buyers are permuted over the remaining slots.  With ``exact`` (the
    default for ``n <= 6``) every permutation and every coin outcome is
    enumerated; otherwise ``reps`` paired samples are drawn.
    """
    n = instance.n
    if deviations is None:
        deviations = [Deviation(f, 0) for f in DEFAULT_SCALES] + [
            Deviation(1.0, dl) for dl in DEFAULT_DELAYS
        ]
    exact = n <= EXACT_MAX_N if exact is None else exact
    others = [i for i in range(n) if i != target]
    s = target_slot - 1
    if exact:
        orders = []
        for perm in itertools.permutations(others):
            o = list(perm)
            o.insert(s, target)
            orders.append(np.array(o))
    else:
        rng = np.random.default_rng(seed)
        orders = []
        for _ in range(reps):
            o = list(rng.permutation(others))
            o.insert(s, target)
            orders.append(np.array(o))

    def utilities(dev: Deviation) -> np.ndarray:
        out = np.zeros(len(orders))
        for i, order in enumerate(orders):
            stream, slot, value = deviant_stream(instance, order, target_slot, dev)
            if exact:
                out[i] = expected_utility(mech, stream, slot, value)
            else:
                coins = RandomCoins(np.random.SeedSequence(seed, spawn_key=(i,)))
                out[i] = _utility(mech, stream, slot, value, coins)
        return out

    base = utilities(Deviation())
    verdicts = []
    name = getattr(mech, "name", type(mech).__name__)
    for dev in deviations:
        alt = utilities(dev)
        mt, md = float(base.mean()), float(alt.mean())
        if exact:
            ct = cd = cdiff = 0.0
        else:
            sq = math.sqrt(len(orders))
            ct = 1.96 * float(base.std(ddof=1)) / sq
            cd = 1.96 * float(alt.std(ddof=1)) / sq
            cdiff = 1.96 * float((alt - base).std(ddof=1)) / sq
        tol = 1e-9 * max(1.0, abs(mt)) if exact else 3 * cdiff
        if md <= mt + tol:
            verdict = "PASS"
        elif not exact and abs(mt) <= ct and abs(md) <= cd:
            verdict = "INCONCLUSIVE"
        else:
            verdict = "FAIL"
        crosses = False
        if dev.delay and class_of is not None:
            t = instance.arrivals
            new = s + dev.delay
            crosses = new >= n or class_of(t[s]) != class_of(t[new])
        verdicts.append(
            ProbeVerdict(name, dev, target_slot, mt, md, ct, cd, cdiff, verdict, exact, crosses)
        )
    return verdicts


def is_regression(v: ProbeVerdict) -> bool:
    return v.verdict == "FAIL" and (v.mechanism, v.kind) in DOCUMENTED_TRUTHFUL


def winner_utility_monotone(schedule, values=None, tol: float = 1e-12) -> list[tuple]:
    """Slots where a winner would gain by waiting one slot under ``schedule``.

    Checks ``v d_j - rho_j d_j >= v d_{j+1} - rho_{j+1} d_{j+1}`` for each
    ``v`` above ``x_j``; returns ``(j, v)`` for every violation (1-based).
    """
    x, rho, d = schedule.thresholds, schedule.payments, schedule.discounts
    bad = []
    for j in range(schedule.n - 1):
        vs = values if values is not None else np.linspace(x[j], max(x[j] * 2, x[j] + 1), 9)[1:]
        for v in np.atleast_1d(vs):
            if v <= x[j]:
                continue
            now = v * d[j] - rho[j] * d[j]
            later = v * d[j + 1] - rho[j + 1] * d[j + 1]
            if later > now + tol * max(1.0, abs(now)):
                bad.append((j + 1, float(v)))
    return bad
