"""Online class-based mechanisms and the known-OPT posted price.

Every mechanism consumes a :class:`~tdauction.market.BidStream` one event at
a time through :meth:`Mechanism.offer` and commits an irrevocable decision per
event.  :meth:`Mechanism.run` is an equivalent array implementation used by
the Monte Carlo harness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .classes import BEYOND, ClassPartition, build_partition, classes_of
from .coins import Coins, RandomCoins
from .curves import DiscountCurve, DomainError
from .market import (
    PHASE_CODE,
    AuctionOutcome,
    BidEvent,
    BidStream,
    DecisionRecord,
    Transcript,
    build_transcript,
    no_sale,
    sale,
)

PRE, OBS, DEC, GAP, TAIL, CLOSED = (
    PHASE_CODE[p] for p in ("pre-class", "observation", "decision", "gap", "tail", "closed")
)


@dataclass(frozen=True)
class MechanismConfig:
    """Shared knobs for the class-based mechanisms.

    Attributes:
        B: Class ratio.
        rate: Arrival rate used for expected class sizes.
        horizon: Auction horizon; defaults to the curve's.
        n: Expected number of buyers; defaults to ``rate * horizon``.
        seed: Seed for the default coin source.
        k: Exponent of the value-ratio bound in the reserved-class count.
        compare: ``price`` compares reported prices; ``valuation`` compares
            de-discounted values and charges ``v_obs * d(t)``.
        class_size: ``expected`` sizes the observation phase from ``n_c``;
            ``realized`` counts the star class's actual arrivals.
    """

    B: float = 2.0
    rate: float = 1.0
    horizon: float | None = None
    n: int | None = None
    seed: int | None = 0
    k: float = 1.0
    compare: str = "price"
    class_size: str = "expected"

    def __post_init__(self):
        if not self.B > 1:
            raise DomainError(f"B must exceed 1, got {self.B}")
        if self.compare not in ("price", "valuation"):
            raise ValueError("compare must be 'price' or 'valuation'")
        if self.class_size not in ("expected", "realized"):
            raise ValueError("class_size must be 'expected' or 'realized'")


def lottery_probs(x: int) -> list[float]:
    """Distribution of the first observed buyer picked with prob ``1/(x+1)`` each.

    Index ``i < x`` means observation buyer ``i + 1`` wins; index ``x`` means
    nobody is picked.
    """
    q = x / (x + 1)
    return [q**i / (x + 1) for i in range(x)] + [q**x]


class Mechanism:
    """Streaming decision contract shared by all mechanisms."""

    name = "mechanism"
    uses_coins = False

    def reset(self, coins: Coins | None = None) -> None:
        self._records: list[DecisionRecord] = []
        self._winner: int | None = None
        self._payment = 0.0
        self._closed = False
        self._note = ""

    def offer(self, event: BidEvent) -> DecisionRecord:
        raise NotImplementedError

    def _log(self, event: BidEvent, phase: str, accept: bool = False, pay: float = 0.0):
        if accept:
            self._winner, self._payment, self._closed = event.slot, pay, True
        rec = DecisionRecord(event.slot, event.time, event.price, phase, accept, pay)
        self._records.append(rec)
        return rec

    def result(self) -> AuctionOutcome:
        tr = Transcript.from_records(self._records)
        u = np.zeros(len(self._records))
        if self._winner is not None:
            u[self._winner - 1] = tr.prices[self._winner - 1] - self._payment
        return AuctionOutcome(
            self._winner, self._payment, self._payment, u, tr, note=self._note
        )

    def run_streaming(self, stream: BidStream, coins: Coins | None = None) -> AuctionOutcome:
        self.prepare(stream)
        self.reset(coins)
        for ev in stream.events:
            self.offer(ev)
        return self.result()

    def prepare(self, stream: BidStream) -> None:
        """Hook for variants that need stream-level counts before the run."""

    def run(self, stream: BidStream, coins: Coins | None = None, record: bool = True):
        return self.run_streaming(stream, coins)


# -- class-based family ------------------------------------------------------


class ClassSelect(Mechanism):
    """Observe-then-Select inside one star class, with an optional tail rule.

    ``star`` picks the class: ``uniform`` over reserved classes, ``fixed``
    (class 1), ``weighted`` (proportional to class weight) or ``most_weighted``
    (largest ``n_c / B**c``, lowest id on ties).  With ``tail=True`` buyers in
    classes beyond the reserved count may still win against the maximum price
    seen up to the end of the star class.
    """

    uses_coins = True

    def __init__(
        self,
        curve: DiscountCurve,
        config: MechanismConfig = MechanismConfig(),
        star: str = "uniform",
        tail: bool = True,
        name: str | None = None,
        partition: ClassPartition | None = None,
    ):
        if star not in ("uniform", "fixed", "weighted", "most_weighted"):
            raise ValueError(f"unknown star rule {star!r}")
        self.curve = curve
        self.config = config
        self.star = star
        self.tail = tail
        self.name = name or f"class-select[{star}]"
        self.partition = partition or build_partition(
            curve,
            B=config.B,
            rate=config.rate,
            n=config.n,
            k=config.k,
        )
        self.c_hat = self.partition.reserved_count
        self._realized: dict[int, int] | None = None
        self._star_note = ""
        self._probs = self._star_probs()

    def _star_probs(self) -> np.ndarray | None:
        c_hat = self.c_hat
        if self.star == "uniform":
            return np.full(c_hat, 1.0 / c_hat)
        if self.star == "weighted":
            w = self.partition.weights
            if w.sum() <= 0:
                self._star_note = "uniform-fallback"
                return np.full(c_hat, 1.0 / c_hat)
            return w / w.sum()
        return None

    def star_distribution(self) -> np.ndarray:
        """Probability of each reserved class being the star class."""
        if self._probs is not None:
            return self._probs.copy()
        p = np.zeros(self.c_hat)
        p[self._fixed_star() - 1] = 1.0
        return p

    def _fixed_star(self) -> int:
        if self.star == "fixed":
            return 1
        est = np.array([r.weight_estimate for r in self.partition.records])
        return int(np.argmax(est)) + 1

    def draw(self, coins: Coins) -> tuple[int, int, int]:
        """Draw ``(star class, observation size, lottery index)``."""
        if self._probs is None:
            star = self._fixed_star()
        else:
            star = coins.choice(self._probs) + 1
        if self.config.class_size == "realized" and self._realized is not None:
            size = self._realized.get(star, 0)
        else:
            size = self.partition.record(star).n_c
        x = int(math.floor(size)) // 2
        pick = coins.choice(lottery_probs(x)) if x > 0 else 0
        return star, x, pick + 1 if pick < x else 0

    def prepare(self, stream: BidStream) -> None:
        if self.config.class_size == "realized":
            cls = self.partition.slot_classes(self.curve, stream.times)
            vals, counts = np.unique(cls, return_counts=True)
            self._realized = dict(zip(vals.tolist(), counts.tolist()))

    # streaming -------------------------------------------------------------

    def reset(self, coins: Coins | None = None) -> None:
        super().reset(coins)
        coins = coins if coins is not None else RandomCoins(self.config.seed)
        self.star_class, self.x, self.pick = self.draw(coins)
        self._note = self._star_note
        self._seen = 0
        self._obs_max = -math.inf
        self._obs_max_v = -math.inf
        self._prefix_max = 0.0
        self._star_done = False
        self._star_started = False

    def _class_at(self, t: float) -> int:
        return int(classes_of(np.array([self.curve.values(t) / self.partition.scale]),
                              self.config.B)[0])

    def offer(self, event: BidEvent) -> DecisionRecord:
        if self._closed:
            return self._log(event, "closed")
        c = self._class_at(event.time)
        cs = self.star_class
        if c < cs:
            self._prefix_max = max(self._prefix_max, event.price)
            return self._log(event, "pre-class")
        if c == cs:
            self._star_started = True
            self._prefix_max = max(self._prefix_max, event.price)
            self._seen += 1
            if self._seen <= self.x:
                if self._seen == self.pick:
                    return self._log(event, "observation", True, 0.0)
                self._obs_max = max(self._obs_max, event.price)
                d = float(self.curve.values(event.time))
                self._obs_max_v = max(self._obs_max_v, event.price / d if d > 0 else 0.0)
                return self._log(event, "observation")
            if self.x == 0:
                return self._log(event, "observation")
            if self.config.compare == "valuation":
                d = float(self.curve.values(event.time))
                v = event.price / d if d > 0 else 0.0
                if v >= self._obs_max_v:
                    pay = min(self._obs_max_v * d, event.price)
                    return self._log(event, "decision", True, pay)
            elif event.price >= self._obs_max:
                return self._log(event, "decision", True, self._obs_max)
            return self._log(event, "decision")
        self._star_done = True
        if c <= self.c_hat or not self.tail:
            return self._log(event, "gap" if c <= self.c_hat else "closed")
        if event.price >= self._prefix_max:
            return self._log(event, "tail", True, self._prefix_max)
        return self._log(event, "tail")

    # array path ------------------------------------------------------------

    def run(self, stream: BidStream, coins: Coins | None = None, record: bool = True):
        """Array implementation; matches :meth:`offer` on streams without ties."""
        self.prepare(stream)
        coins = coins if coins is not None else RandomCoins(self.config.seed)
        cs, x, pick = self.draw(coins)
        return self.run_with_classes(stream, self._classes_for(stream.times), cs, x, pick, record)

    def _classes_for(self, times: np.ndarray) -> np.ndarray:
        # grid streams reuse one times array, so the class lookup is cached by identity
        cached = getattr(self, "_cls_cache", None)
        if cached is not None and cached[0] is times:
            return cached[1]
        cls = self.partition.slot_classes(self.curve, times)
        self._cls_cache = (times, cls)
        return cls

    def run_with_classes(self, stream, cls, cs, x, pick, record=True) -> AuctionOutcome:
        r = stream.prices
        n = r.size
        star = np.flatnonzero(cls == cs)
        m = star.size
        winner, pay, accept_phase = None, 0.0, None
        if pick and pick <= m:
            winner, pay, accept_phase = int(star[pick - 1]), 0.0, OBS
        elif x > 0 and m > x:
            dec = star[x:]
            if self.config.compare == "valuation":
                d = self.curve.values(stream.times)
                with np.errstate(divide="ignore", invalid="ignore"):
                    v = np.where(d > 0, r / d, 0.0)
                vmax = v[star[:x]].max()
                hit = np.flatnonzero(v[dec] >= vmax)
                if hit.size:
                    winner = int(dec[hit[0]])
                    pay, accept_phase = float(min(vmax * d[winner], r[winner])), DEC
            else:
                omax = r[star[:x]].max()
                hit = np.flatnonzero(r[dec] >= omax)
                if hit.size:
                    winner, pay, accept_phase = int(dec[hit[0]]), float(omax), DEC
        if winner is None and self.tail:
            beyond = cls > cs
            jstar = int(np.argmax(beyond)) if beyond.any() else n
            tail = np.flatnonzero(cls > self.c_hat)
            tail = tail[tail >= jstar]
            if tail.size:
                thr = float(r[:jstar].max()) if jstar > 0 else 0.0
                thr = max(thr, 0.0)
                hit = np.flatnonzero(r[tail] >= thr)
                if hit.size:
                    winner, pay, accept_phase = int(tail[hit[0]]), thr, TAIL
        if not record:
            return _light_outcome(n, winner, pay, r, self._star_note)
        phases = np.full(n, GAP, dtype=np.int8)
        phases[cls < cs] = PRE
        phases[star] = DEC
        phases[star[:x]] = OBS
        if x == 0:
            phases[star] = OBS
        phases[cls > self.c_hat] = TAIL if self.tail else CLOSED
        if winner is not None:
            phases[winner] = accept_phase
            phases[winner + 1:] = CLOSED
            return sale(stream, winner + 1, pay, phases, note=self._star_note)
        return no_sale(stream, phases, note=self._star_note)


def _light_outcome(n, winner, pay, prices, note="") -> AuctionOutcome:
    """Outcome without a transcript, for bulk Monte Carlo."""
    u = np.zeros(0)
    if winner is None:
        return AuctionOutcome(None, 0.0, 0.0, u, note=note)
    return AuctionOutcome(winner + 1, pay, pay, u, note=note)


def randomized_select(curve, config=MechanismConfig(), **kw) -> ClassSelect:
    return ClassSelect(curve, config, star="uniform", tail=True, name="m_r", **kw)


def fixed_select(curve, config=MechanismConfig(), **kw) -> ClassSelect:
    return ClassSelect(curve, config, star="fixed", tail=False, name="m_1", **kw)


def weighted_select(curve, config=MechanismConfig(), **kw) -> ClassSelect:
    return ClassSelect(curve, config, star="weighted", tail=True, name="m_w", **kw)


def most_weighted_select(curve, config=MechanismConfig(), **kw) -> ClassSelect:
    return ClassSelect(curve, config, star="most_weighted", tail=False, name="m_w2", **kw)


def observe_then_select(
    prices, n_c: float | None = None, coins: Coins | None = None, seed: int | None = 0
) -> AuctionOutcome:
    """Observe-then-Select on a stream that is entirely one class.

    ``n_c`` is the expected class size (defaults to the stream length).
    """
    stream = prices if isinstance(prices, BidStream) else BidStream.from_prices(prices)
    n_c = len(stream) if n_c is None else n_c
    if n_c < 1:
        raise DomainError("class size must be at least 1")
    x = int(math.floor(n_c)) // 2
    coins = coins if coins is not None else RandomCoins(seed)
    pick = coins.choice(lottery_probs(x)) if x > 0 else 0
    pick = pick + 1 if pick < x else 0
    return observe_then_select_fixed(stream, x, pick)


def observe_then_select_fixed(stream: BidStream, x: int, pick: int) -> AuctionOutcome:
    """Deterministic core with the lottery outcome supplied (0 = nobody)."""
    r = stream.prices
    n = r.size
    phases = np.full(n, DEC, dtype=np.int8)
    phases[: min(x, n)] = OBS
    if x == 0:
        phases[:] = OBS
        return no_sale(stream, phases, note="class-too-small")
    if pick and pick <= n:
        phases[pick:] = CLOSED
        return sale(stream, pick, 0.0, phases)
    if n <= x:
        return no_sale(stream, phases)
    omax = float(r[:x].max())
    hit = np.flatnonzero(r[x:] >= omax)
    if hit.size == 0:
        return no_sale(stream, phases)
    w = x + int(hit[0])
    phases[w + 1:] = CLOSED
    return sale(stream, w + 1, omax, phases)


# -- MOD1 --------------------------------------------------------------------


class ModifiedObserveDecide(Mechanism):
    """Deterministic observe-then-decide restricted to class 1.

    If no decision-phase price reaches the observation maximum, the last
    class-1 arrival is accepted at ``min(observation max, its price)``.  The
    last arrival is recognised online: either the count reaches the expected
    class size, or the next grid time falls outside class 1 or the horizon.
    """

    name = "mod_1"

    def __init__(self, curve: DiscountCurve, config: MechanismConfig = MechanismConfig()):
        self.curve = curve
        self.config = config
        self.partition = build_partition(curve, B=config.B, rate=config.rate, n=config.n,
                                         k=config.k)
        self.n1 = self.partition.record(1).n_c
        self.x = int(math.floor(self.n1)) // 2
        self.target = max(1, int(round(self.n1)))
        self.horizon = config.horizon or curve.horizon

    def _classes(self, t) -> np.ndarray:
        return classes_of(self.curve.values(t) / self.partition.scale, self.config.B)

    def _is_last(self, t: np.ndarray, count: np.ndarray) -> np.ndarray:
        nxt = t + 1.0 / self.config.rate
        inside = nxt <= self.horizon * (1 + 1e-12)
        nxt_cls = self._classes(np.minimum(nxt, self.horizon))
        return (count >= self.target) | ~inside | (nxt_cls != 1)

    def reset(self, coins=None) -> None:
        super().reset(coins)
        self._seen = 0
        self._obs_max = -math.inf

    def offer(self, event: BidEvent) -> DecisionRecord:
        if self._closed:
            return self._log(event, "closed")
        if int(self._classes(np.array([event.time]))[0]) != 1:
            self._closed = self._seen > 0
            return self._log(event, "closed" if self._seen else "pre-class")
        self._seen += 1
        if self.x == 0:
            return self._log(event, "observation")
        if self._seen <= self.x:
            self._obs_max = max(self._obs_max, event.price)
            return self._log(event, "observation")
        if event.price >= self._obs_max:
            return self._log(event, "decision", True, self._obs_max)
        last = bool(self._is_last(np.array([event.time]), np.array([self._seen]))[0])
        if last:
            return self._log(event, "decision", True, min(self._obs_max, event.price))
        return self._log(event, "decision")

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r, t = stream.prices, stream.times
        n = r.size
        cls = self._classes(t)
        in1 = np.flatnonzero(cls == 1)
        # class 1 is contiguous on non-increasing curves; only its first run counts
        if in1.size:
            breaks = np.flatnonzero(np.diff(in1) != 1)
            if breaks.size:
                in1 = in1[: breaks[0] + 1]
        phases = np.full(n, CLOSED, dtype=np.int8)
        if in1.size:
            phases[: in1[0]] = PRE
        phases[in1] = OBS
        winner, pay = None, 0.0
        x = self.x
        if x > 0 and in1.size > x:
            phases[in1[x:]] = DEC
            omax = float(r[in1[:x]].max())
            dec = in1[x:]
            counts = np.arange(x + 1, in1.size + 1)
            hit = r[dec] >= omax
            last = self._is_last(t[dec], counts)
            stop = np.flatnonzero(hit | last)
            if stop.size:
                i = int(stop[0])
                winner = int(dec[i])
                pay = omax if hit[i] else min(omax, float(r[winner]))
        if not record:
            return _light_outcome(n, winner, pay, r)
        if winner is None:
            return no_sale(stream, phases)
        phases[winner + 1:] = CLOSED
        return sale(stream, winner + 1, pay, phases)


# -- known OPT -----------------------------------------------------------------


class KnownOptPosted(Mechanism):
    """Accept the first price of at least ``Z / 2`` and charge ``Z / 2``."""

    name = "m_z"

    def __init__(self, Z: float):
        if not Z > 0:
            raise DomainError(f"Z must be positive, got {Z}")
        self.Z = float(Z)

    def offer(self, event: BidEvent) -> DecisionRecord:
        if self._closed:
            return self._log(event, "closed")
        half = self.Z / 2
        if event.price >= half:
            return self._log(event, "decision", True, half)
        return self._log(event, "decision")

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r = stream.prices
        half = self.Z / 2
        hit = np.flatnonzero(r >= half)
        winner = int(hit[0]) if hit.size else None
        if not record:
            return _light_outcome(r.size, winner, half, r)
        phases = np.full(r.size, DEC, dtype=np.int8)
        if winner is None:
            return no_sale(stream, phases)
        phases[winner + 1:] = CLOSED
        return sale(stream, winner + 1, half, phases)


def known_opt_posted(stream: BidStream, Z: float) -> AuctionOutcome:
    return KnownOptPosted(Z).run(stream)
