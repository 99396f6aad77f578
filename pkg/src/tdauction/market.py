"""Auction universe: instances, bid streams, outcomes and offline oracles."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .curves import DiscountCurve, DomainError

EXACT_MAX_N = 8

PHASES = (
    "pre-class",
    "observation",
    "decision",
    "gap",
    "tail",
    "closed",
    "offline",
    "learning",
)
PHASE_CODE = {name: i for i, name in enumerate(PHASES)}


def reported_price(v: float, t: float, curve: DiscountCurve) -> float:
    """Truthful report ``v * d(t)``."""
    if v < 0:
        raise DomainError(f"valuation must be non-negative, got {v}")
    return v * curve(t)


def utility(v: float, d: float, payment: float, won: bool) -> float:
    """Quasi-linear buyer utility; ``d`` is the discount at the buyer's arrival."""
    return v * d - payment if won else 0.0


@dataclass(frozen=True)
class MarketInstance:
    """Ground truth for one auction: valuations, arrival times and curve."""

    valuations: np.ndarray
    arrivals: np.ndarray
    curve: DiscountCurve
    rate: float = 1.0
    horizon: float | None = None

    def __post_init__(self):
        v = np.asarray(self.valuations, dtype=float)
        a = np.asarray(self.arrivals, dtype=float)
        object.__setattr__(self, "valuations", v)
        object.__setattr__(self, "arrivals", a)
        if self.horizon is None:
            object.__setattr__(self, "horizon", self.curve.horizon)
        if v.shape != a.shape or v.ndim != 1:
            raise ValueError("valuations and arrivals must be 1-d and equally long")
        if np.any(v < 0):
            raise DomainError("valuations must be non-negative")
        if a.size and (a[0] < 0 or a[-1] > self.horizon * (1 + 1e-12)):
            raise DomainError("arrivals must lie in [0, horizon]")
        if np.any(np.diff(a) <= 0):
            raise ValueError("arrival times must be strictly increasing")

    @property
    def n(self) -> int:
        return int(self.valuations.size)

    @property
    def discounts(self) -> np.ndarray:
        return self.curve.values(self.arrivals)

    def to_dict(self) -> dict:
        return {
            "valuations": self.valuations.tolist(),
            "arrivals": self.arrivals.tolist(),
            "curve": self.curve.to_dict(),
            "lambda": self.rate,
            "horizon": self.horizon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "MarketInstance":
        return cls(
            valuations=np.array(data["valuations"], dtype=float),
            arrivals=np.array(data["arrivals"], dtype=float),
            curve=DiscountCurve.from_dict(data["curve"]),
            rate=float(data["lambda"]),
            horizon=float(data["horizon"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "MarketInstance":
        return cls.from_dict(json.loads(text))


class BidEvent(NamedTuple):
    slot: int
    time: float
    price: float


@dataclass(frozen=True)
class BidStream:
    """Online view of an instance: reported prices in arrival order.

    Slots are 1-based.  ``permutation[j-1]`` is the index (into the instance's
    valuation array) of the buyer occupying slot ``j``.
    """

    times: np.ndarray
    prices: np.ndarray
    permutation: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        object.__setattr__(self, "prices", np.asarray(self.prices, dtype=float))

    def __len__(self) -> int:
        return int(self.prices.size)

    @property
    def events(self) -> Iterator[BidEvent]:
        for j, (t, r) in enumerate(zip(self.times.tolist(), self.prices.tolist()), start=1):
            yield BidEvent(j, t, r)

    @classmethod
    def from_prices(cls, prices: Sequence[float], times: Sequence[float] | None = None):
        prices = np.asarray(prices, dtype=float)
        if times is None:
            times = np.arange(1, prices.size + 1, dtype=float)
        return cls(np.asarray(times, dtype=float), prices)


def make_stream(
    instance: MarketInstance,
    permutation: Sequence[int] | None = None,
    rng: np.random.Generator | None = None,
) -> BidStream:
    """Truthful stream for ``instance`` under an arrival order.

    With no permutation and no ``rng`` the identity order is used; with an
    ``rng`` a uniformly random order is drawn.
    """
    n = instance.n
    if permutation is None:
        perm = rng.permutation(n) if rng is not None else np.arange(n)
    else:
        perm = np.asarray(permutation, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(n)):
            raise ValueError("permutation must be a rearrangement of range(n)")
    prices = instance.valuations[perm] * instance.discounts
    return BidStream(instance.arrivals, prices, perm)


class DecisionRecord(NamedTuple):
    slot: int
    time: float
    price: float
    phase: str
    accepted: bool
    payment: float


@dataclass(frozen=True)
class Transcript:
    """Append-only decision log, stored column-wise."""

    slots: np.ndarray
    times: np.ndarray
    prices: np.ndarray
    phases: np.ndarray
    accepted: np.ndarray
    payments: np.ndarray

    def __len__(self) -> int:
        return int(self.slots.size)

    def __iter__(self) -> Iterator[DecisionRecord]:
        for s, t, r, ph, a, p in zip(
            self.slots.tolist(),
            self.times.tolist(),
            self.prices.tolist(),
            self.phases.tolist(),
            self.accepted.tolist(),
            self.payments.tolist(),
        ):
            yield DecisionRecord(s, t, r, PHASES[ph], a, p)

    def accepted_records(self) -> list[DecisionRecord]:
        return [rec for rec in self if rec.accepted]

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "slot": rec.slot,
                    "time": rec.time,
                    "price": rec.price,
                    "phase": rec.phase,
                    "decision": "accept" if rec.accepted else "reject",
                    "payment": rec.payment,
                }
            )
            for rec in self
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_records(cls, records: Sequence[DecisionRecord]) -> "Transcript":
        if not records:
            return empty_transcript()
        return cls(
            np.array([r.slot for r in records], dtype=np.int64),
            np.array([r.time for r in records], dtype=float),
            np.array([r.price for r in records], dtype=float),
            np.array([PHASE_CODE[r.phase] for r in records], dtype=np.int8),
            np.array([r.accepted for r in records], dtype=bool),
            np.array([r.payment for r in records], dtype=float),
        )


def empty_transcript() -> Transcript:
    z = np.zeros(0)
    return Transcript(
        np.zeros(0, dtype=np.int64), z, z, np.zeros(0, dtype=np.int8), np.zeros(0, dtype=bool), z
    )


def build_transcript(
    stream: BidStream, phases: np.ndarray, winner: int | None, payment: float
) -> Transcript:
    """Column transcript with at most one accept (``winner`` is 1-based)."""
    n = len(stream)
    accepted = np.zeros(n, dtype=bool)
    payments = np.zeros(n)
    if winner is not None:
        accepted[winner - 1] = True
        payments[winner - 1] = payment
    return Transcript(
        np.arange(1, n + 1, dtype=np.int64),
        stream.times,
        stream.prices,
        np.asarray(phases, dtype=np.int8),
        accepted,
        payments,
    )


@dataclass(frozen=True)
class AuctionOutcome:
    """Result of one auction run.

    ``revenue`` is the seller's take: the winner's payment minus any
    compensation credited to other buyers.  ``utilities`` are measured against
    reported prices, which equal true discounted values under truthful play.
    """

    winner: int | None
    payment: float
    revenue: float
    utilities: np.ndarray
    transcript: Transcript = field(default_factory=empty_transcript)
    compensation: float = 0.0
    note: str = ""

    @property
    def sold(self) -> bool:
        return self.winner is not None


def no_sale(stream: BidStream, phases: np.ndarray | None = None, note: str = "") -> AuctionOutcome:
    n = len(stream)
    if phases is None:
        phases = np.full(n, PHASE_CODE["closed"], dtype=np.int8)
    return AuctionOutcome(
        None, 0.0, 0.0, np.zeros(n), build_transcript(stream, phases, None, 0.0), note=note
    )


def sale(
    stream: BidStream,
    winner: int,
    payment: float,
    phases: np.ndarray,
    note: str = "",
) -> AuctionOutcome:
    u = np.zeros(len(stream))
    u[winner - 1] = stream.prices[winner - 1] - payment
    return AuctionOutcome(
        winner, payment, payment, u, build_transcript(stream, phases, winner, payment), note=note
    )


# -- offline oracles ---------------------------------------------------------


def vickrey_offline(stream: BidStream) -> AuctionOutcome:
    """Second-price auction over the whole stream.

    Ties go to the earliest slot; a lone bidder pays 0.
    """
    n = len(stream)
    if n == 0:
        return no_sale(stream)
    r = stream.prices
    winner = int(np.argmax(r)) + 1
    payment = float(np.partition(r, -2)[-2]) if n >= 2 else 0.0
    phases = np.full(n, PHASE_CODE["offline"], dtype=np.int8)
    return sale(stream, winner, payment, phases)


def vickrey_revenue(prices: np.ndarray) -> float:
    """Second-largest entry (0 for fewer than two)."""
    if prices.size < 2:
        return 0.0
    return float(np.partition(prices, -2)[-2])


def opt1(stream: BidStream) -> float:
    """Largest reported price in the stream (0 when empty)."""
    if len(stream) == 0:
        return 0.0
    return float(stream.prices.max())


def _all_permutations(n: int) -> np.ndarray:
    if n > EXACT_MAX_N:
        raise ValueError(
            f"exact enumeration limited to n <= {EXACT_MAX_N} (got {n}); use Monte Carlo"
        )
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def exact_expected_vickrey(instance: MarketInstance) -> float:
    """Average second-highest discounted price over all ``n!`` arrival orders."""
    n = instance.n
    if n < 2:
        return 0.0
    perms = _all_permutations(n)
    prices = instance.valuations[perms] * instance.discounts[None, :]
    second = np.partition(prices, -2, axis=1)[:, -2]
    return float(second.mean())


def observe_select_expected_revenue(class_prices: Sequence[float]) -> float:
    """Expected Observe-then-Select revenue for one fixed order of class prices.

    The observation size is ``x = floor(m / 2)`` for ``m`` prices.  Revenue
    is earned only when no observation buyer wins the lottery (probability
    ``(x/(x+1))**x``) and a later price reaches the observation maximum.
    """
    prices = np.asarray(class_prices, dtype=float)
    x = prices.size // 2
    if x == 0:
        return 0.0
    top = prices[:x].max()
    if not np.any(prices[x:] >= top):
        return 0.0
    return (x / (x + 1)) ** x * float(top)


def exact_expected_observe_select(
    instance: MarketInstance, class_slots: Sequence[int]
) -> float:
    """Exact expected Observe-then-Select revenue on a set of slots.

    ``class_slots`` are 1-based slot numbers forming the class; the average
    runs over all ``n!`` assignments of valuations to slots.
    """
    slots = np.asarray(list(class_slots), dtype=np.int64)
    if slots.size == 0:
        return 0.0
    n = instance.n
    if slots.min() < 1 or slots.max() > n:
        raise ValueError("class slots must lie within the instance")
    x = slots.size // 2
    if x == 0:
        return 0.0
    perms = _all_permutations(n)
    d = instance.discounts[slots - 1]
    prices = instance.valuations[perms[:, slots - 1]] * d[None, :]
    top = prices[:, :x].max(axis=1)
    hit = (prices[:, x:] >= top[:, None]).any(axis=1)
    return float(np.mean(np.where(hit, top, 0.0)) * (x / (x + 1)) ** x)


def grid_arrivals(rate: float, horizon: float) -> np.ndarray:
    """Expected arrival grid ``t_j = j / rate`` for ``t_j <= horizon``."""
    count = int(math.floor(rate * horizon * (1 + 1e-12)))
    return np.arange(1, count + 1, dtype=float) / rate
