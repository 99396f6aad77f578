"""Posted-price mechanisms driven by a valuation distribution.

Thresholds ``x_j`` live in valuation units; the price posted at grid slot
``j`` is ``x_j * d_j``.  Schedules are computed by backward recursion over
the expected arrival grid.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .distributions import ValuationDistribution, fit_mle
from .market import (
    PHASE_CODE,
    AuctionOutcome,
    BidEvent,
    BidStream,
    DecisionRecord,
    build_transcript,
    no_sale,
    sale,
)
from .online import Mechanism, _light_outcome

DEC, CLOSED, LEARN = PHASE_CODE["decision"], PHASE_CODE["closed"], PHASE_CODE["learning"]
SCAN_POINTS = 64
REFINE_POINTS = 10_000


# -- fixed reservation price ---------------------------------------------------


def _unique_counts(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u, c = np.unique(np.asarray(d, dtype=float), return_counts=True)
    keep = u > 0
    return u[keep], c[keep]


def fixed_price_revenue(dist: ValuationDistribution, d, x) -> np.ndarray:
    """``(1 - prod_j F(x / d_j)) * x`` for each candidate ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    du, cnt = _unique_counts(np.asarray(d))
    out = np.empty_like(x)
    for s in range(0, x.size, 512):
        xs = x[s : s + 512]
        F = dist.cdf(xs[:, None] / du[None, :])
        with np.errstate(divide="ignore"):
            logp = (np.log(F) * cnt[None, :]).sum(axis=1)
        out[s : s + 512] = (1.0 - np.exp(logp)) * xs
    return out


def fixed_reservation_price(dist: ValuationDistribution, d) -> tuple[float, float]:
    """Best single posted price against discounts ``d``.

    Returns ``(x, expected revenue)``.  The buyer at slot ``j`` takes the
    offer when ``v * d_j > x``.
    """
    d = np.asarray(d, dtype=float)
    if d.size == 0:
        raise ValueError("need at least one grid point")
    lo, hi = dist.support
    if dist.is_point_mass:
        x = float(np.nextafter(lo * d.max(), -np.inf))
        return x, float(fixed_price_revenue(dist, d, x)[0])
    atoms = dist.candidates()
    if atoms is not None:
        cand = np.unique(np.concatenate([np.outer(atoms, np.unique(d)).ravel(), [0.0]]))
    else:
        top = hi * d.max()
        cand = np.unique(np.concatenate([np.linspace(0.0, top, REFINE_POINTS), np.unique(d) * hi]))
    rev = fixed_price_revenue(dist, d, cand)
    i = int(np.argmax(rev))
    x, best = float(cand[i]), float(rev[i])
    if atoms is None and 0 < i < cand.size - 1:
        res = optimize.minimize_scalar(
            lambda z: -fixed_price_revenue(dist, d, z)[0],
            bounds=(cand[i - 1], cand[i + 1]),
            method="bounded",
            options={"xatol": 1e-12 * max(1.0, cand[-1])},
        )
        if -res.fun > best:
            x, best = float(res.x), float(-res.fun)
    return x, best


# -- dynamic schedules ---------------------------------------------------------


@dataclass(frozen=True)
class ReservationSchedule:
    """Per-slot thresholds and payments with the expected-revenue ladders.

    ``ladder[m]`` is the expected revenue with ``m`` slots left (``ladder[0]
    = 0``).  ``payments`` equal ``thresholds`` for the plain dynamic schedule.
    """

    times: np.ndarray
    discounts: np.ndarray
    thresholds: np.ndarray
    payments: np.ndarray
    ladder: np.ndarray
    payment_ladder: np.ndarray | None = None

    @property
    def n(self) -> int:
        return int(self.discounts.size)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["j", "t_j", "d_j", "x_j", "rho_j", "R_m", "R_prime_m"])
        n = self.n
        for j in range(1, n + 1):
            m = n - j + 1
            rp = self.payment_ladder[m] if self.payment_ladder is not None else self.ladder[m]
            w.writerow([j, repr(float(self.times[j - 1])), repr(float(self.discounts[j - 1])),
                        repr(float(self.thresholds[j - 1])), repr(float(self.payments[j - 1])),
                        repr(float(self.ladder[m])), repr(float(rp))])
        return buf.getvalue()


def _golden_step(dist: ValuationDistribution, d: float, R: float) -> tuple[float, float]:
    """Maximise ``S(x) x d + F(x) R`` over the support."""
    lo, hi = dist.support
    atoms = dist.candidates()
    if atoms is not None:
        g = atoms
    else:
        g = np.linspace(lo, hi, SCAN_POINTS)
    vals = dist.sf(g) * g * d + dist.cdf(g) * R
    i = int(np.argmax(vals))
    x, best = float(g[i]), float(vals[i])
    if atoms is None and 0 < i < g.size - 1 and vals[i] > max(vals[i - 1], vals[i + 1]):
        cdf = dist.cdf_scalar

        def f(z):
            F = cdf(z)
            return -((1.0 - F) * z * d + F * R)

        res = optimize.minimize_scalar(
            f, bracket=(g[i - 1], g[i], g[i + 1]), method="golden", tol=1e-6
        )
        if -res.fun >= best:
            x, best = float(res.x), float(-res.fun)
    return x, best


def _uniform_params(dist: ValuationDistribution) -> float | None:
    if dist.family == "uniform" and dist.params["lo"] == 0.0:
        return dist.params["hi"]
    return None


def dynamic_reservation_schedule(
    dist: ValuationDistribution, d, times=None
) -> ReservationSchedule:
    """Backward recursion for per-slot thresholds.

    For uniform ``[0, a]`` the closed form ``x = a/2 + R/(2d)`` and
    ``R' = (R + a d)^2 / (4 a d)`` is used; other laws maximise each step
    numerically (64-point scan, then golden-section refinement).
    """
    d = np.asarray(d, dtype=float)
    n = d.size
    times = np.arange(1, n + 1, dtype=float) if times is None else np.asarray(times, dtype=float)
    x = np.zeros(n)
    R = np.zeros(n + 1)
    a = _uniform_params(dist)
    for m in range(1, n + 1):
        j = n - m
        dj, prev = d[j], R[m - 1]
        if dj <= 0:
            x[j], R[m] = dist.support[1], prev
        elif a is not None:
            x[j] = min(a, a / 2 + prev / (2 * dj))
            R[m] = (prev + a * dj) ** 2 / (4 * a * dj) if prev < a * dj else prev
        else:
            x[j], R[m] = _golden_step(dist, dj, prev)
    return ReservationSchedule(times, d, x, x.copy(), R)


def semi_truthful_schedule(
    dist: ValuationDistribution,
    d,
    times=None,
    base: ReservationSchedule | None = None,
    ir_cap: bool = True,
) -> ReservationSchedule:
    """Thresholds of the dynamic schedule with crafted payments ``rho_j``.

    ``rho_n = x_n`` and ``rho_j = (x_j d_j - x_j d_{j+1} + rho_{j+1} d_{j+1}) / d_j``.
    With ``ir_cap`` each ``rho_j`` is capped at ``x_j`` inside the recursion
    so the payment never exceeds the posted price; without it the recursion
    runs as written and can overshoot.
    """
    sched = base or dynamic_reservation_schedule(dist, d, times)
    d, x = sched.discounts, sched.thresholds
    n = d.size
    rho = np.zeros(n)
    if n:
        rho[-1] = x[-1]
    for j in range(n - 2, -1, -1):
        if d[j] <= 0:
            rho[j] = x[j]
            continue
        r = (x[j] * d[j] - x[j] * d[j + 1] + rho[j + 1] * d[j + 1]) / d[j]
        rho[j] = min(x[j], r) if ir_cap else r
    Rp = np.zeros(n + 1)
    for m in range(1, n + 1):
        j = n - m
        s = float(dist.sf(x[j]))
        Rp[m] = s * rho[j] * d[j] + (1 - s) * Rp[m - 1]
    return ReservationSchedule(sched.times, d, x, rho, sched.ladder, Rp)


def slot_index(t: np.ndarray, rate: float, n: int) -> np.ndarray:
    """Grid slot (0-based) an arrival time falls into."""
    j = np.ceil(np.asarray(t, dtype=float) * rate - 1e-9).astype(np.int64)
    return np.clip(j, 1, n) - 1


# -- mechanisms ----------------------------------------------------------------


class FixedPrice(Mechanism):
    """Accept the first ``r > x`` and charge ``x``."""

    name = "m_f"

    def __init__(self, x: float):
        self.x = float(x)

    @classmethod
    def from_distribution(cls, dist: ValuationDistribution, d) -> "FixedPrice":
        return cls(fixed_reservation_price(dist, d)[0])

    def offer(self, event: BidEvent) -> DecisionRecord:
        if self._closed:
            return self._log(event, "closed")
        if event.price > self.x:
            return self._log(event, "decision", True, self.x)
        return self._log(event, "decision")

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r = stream.prices
        hit = np.flatnonzero(r > self.x)
        w = int(hit[0]) if hit.size else None
        if not record:
            return _light_outcome(r.size, w, self.x, r)
        phases = np.full(r.size, DEC, dtype=np.int8)
        if w is None:
            return no_sale(stream, phases)
        phases[w + 1 :] = CLOSED
        return sale(stream, w + 1, self.x, phases)


class SchedulePosted(Mechanism):
    """Post ``x_j d_j`` at slot ``j``; the first strictly higher price wins.

    The winner pays ``payments[j] * d_j``; with the plain dynamic schedule
    that is the posted price itself.
    """

    def __init__(self, schedule: ReservationSchedule, rate: float = 1.0, name: str = "m_d"):
        self.schedule = schedule
        self.rate = rate
        self.name = name
        self.post = schedule.thresholds * schedule.discounts
        self.charge = schedule.payments * schedule.discounts

    def offer(self, event: BidEvent) -> DecisionRecord:
        if self._closed:
            return self._log(event, "closed")
        j = int(slot_index(np.array([event.time]), self.rate, self.schedule.n)[0])
        if event.price > self.post[j]:
            return self._log(event, "decision", True, float(self.charge[j]))
        return self._log(event, "decision")

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r = stream.prices
        j = slot_index(stream.times, self.rate, self.schedule.n)
        hit = np.flatnonzero(r > self.post[j])
        w = int(hit[0]) if hit.size else None
        pay = float(self.charge[j[w]]) if w is not None else 0.0
        if not record:
            return _light_outcome(r.size, w, pay, r)
        phases = np.full(r.size, DEC, dtype=np.int8)
        if w is None:
            return no_sale(stream, phases)
        phases[w + 1 :] = CLOSED
        return sale(stream, w + 1, pay, phases)


def dynamic_posted(dist, d, rate: float = 1.0) -> SchedulePosted:
    return SchedulePosted(dynamic_reservation_schedule(dist, d), rate, "m_d")


def semi_truthful_posted(dist, d, rate: float = 1.0, ir_cap: bool = True) -> SchedulePosted:
    return SchedulePosted(semi_truthful_schedule(dist, d, ir_cap=ir_cap), rate, "m_t")


def compensation_per_buyer(schedule: ReservationSchedule, j: int) -> float:
    """Credit owed to each learning-phase buyer when slot ``j`` (1-based) wins.

    ``((x_{j-1} + x_j)/2 * d_j - rho_j * d_j) * (x_{j-1} - x_j) / j``; the
    first slot of a schedule has no predecessor and owes nothing.
    """
    if j <= 1:
        return 0.0
    x, rho, d = schedule.thresholds, schedule.payments, schedule.discounts
    xp, xj = x[j - 2], x[j - 1]
    return ((xp + xj) / 2 * d[j - 1] - rho[j - 1] * d[j - 1]) * (xp - xj) / j


class LearningPosted(Mechanism):
    """Reject a learning sample, fit the valuation law, then post semi-truthfully.

    The first ``n_s`` arrivals are de-discounted and fed to a maximum
    likelihood fit of ``family``.  The remaining grid slots run the
    semi-truthful schedule of the fitted law.  When someone wins at schedule
    slot ``j`` each learning buyer is credited the compensation from
    :func:`compensation_per_buyer` and the seller's revenue drops by the total.
    """

    name = "m_l"

    def __init__(self, curve, n: int, family: str = "uniform", n_s: int | None = None,
                 rate: float = 1.0):
        if family not in ("uniform", "normal", "exponential"):
            raise ValueError(f"cannot learn family {family!r}")
        self.curve = curve
        self.n = int(n)
        self.family = family
        self.n_s = int(math.ceil(math.sqrt(n))) if n_s is None else int(n_s)
        if not 0 < self.n_s < self.n:
            raise ValueError("need 0 < n_s < n")
        self.rate = rate
        self.grid = np.arange(1, self.n + 1) / rate
        self.grid_d = curve.values(self.grid)

    def _fit(self, times, prices) -> tuple[ReservationSchedule, ValuationDistribution]:
        d = self.curve.values(times)
        ok = d > 0
        v = prices[ok] / d[ok] if ok.any() else np.zeros(1)
        dist = fit_mle(self.family, v)
        rest = self.grid_d[self.n_s :]
        return semi_truthful_schedule(dist, rest, self.grid[self.n_s :]), dist

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r, t = stream.prices, stream.times
        ns = self.n_s
        if r.size < ns:
            return no_sale(stream, np.full(r.size, LEARN, dtype=np.int8), note="short-stream")
        sched, _ = self._fit(t[:ns], r[:ns])
        self.schedule = sched
        j_all = slot_index(t[ns:], self.rate, self.n) - ns
        j_all = np.clip(j_all, 0, sched.n - 1)
        post = sched.thresholds[j_all] * sched.discounts[j_all]
        hit = np.flatnonzero(r[ns:] > post)
        phases = np.full(r.size, DEC, dtype=np.int8)
        phases[:ns] = LEARN
        if hit.size == 0:
            if not record:
                return _light_outcome(r.size, None, 0.0, r)
            return no_sale(stream, phases)
        w = ns + int(hit[0])
        js = int(j_all[hit[0]])
        pay = float(sched.payments[js] * sched.discounts[js])
        eps = compensation_per_buyer(sched, js + 1)
        comp = eps * ns
        if not record:
            return AuctionOutcome(w + 1, pay, pay - comp, np.zeros(0), compensation=comp)
        phases[w + 1 :] = CLOSED
        u = np.zeros(r.size)
        u[:ns] = eps
        u[w] = r[w] - pay
        tr = build_transcript(stream, phases, w + 1, pay)
        return AuctionOutcome(w + 1, pay, pay - comp, u, tr, compensation=comp)

    def run_streaming(self, stream, coins=None):
        return self.run(stream, coins)


# -- known OPT helper ------------------------------------------------------------


def expected_max_price(dist: ValuationDistribution, d) -> float:
    """``E[max_j v_j d_j]`` for i.i.d. valuations on discounts ``d``."""
    d = np.asarray(d, dtype=float)
    du, cnt = _unique_counts(d)
    if du.size == 0:
        return 0.0
    top = dist.support[1] * du.max()
    atoms = dist.candidates()

    def tail(y):
        F = dist.cdf(y / du)
        with np.errstate(divide="ignore"):
            return 1.0 - math.exp(float((np.log(F) * cnt).sum()))

    if atoms is not None:
        pts = np.unique(np.outer(dist._sorted, du).ravel())
        pts = pts[(pts > 0) & (pts <= top)]
        edges = np.concatenate([[0.0], pts])
        # piecewise constant between breakpoints
        return float(sum(tail(0.5 * (a + b)) * (b - a) for a, b in zip(edges, edges[1:])))
    kinks = dist.support[1] * du
    kinks = kinks[(kinks > 0) & (kinks < top)][-50:]
    with warnings.catch_warnings():
        # the integrand has kinks at every distinct discount; quad may flag roundoff
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(tail, 0.0, top, limit=400, points=list(kinks) or None)
    return float(val)
