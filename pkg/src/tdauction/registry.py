"""Build mechanisms by name for a given market setting."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .curves import DiscountCurve
from .distributions import ValuationDistribution, preset_distribution
from .market import AuctionOutcome, BidStream, no_sale, sale, vickrey_offline
from .online import (
    KnownOptPosted,
    Mechanism,
    MechanismConfig,
    ModifiedObserveDecide,
    _light_outcome,
    fixed_select,
    most_weighted_select,
    randomized_select,
    weighted_select,
)
from .posted import (
    FixedPrice,
    LearningPosted,
    dynamic_posted,
    expected_max_price,
    semi_truthful_posted,
)

MECHANISMS = (
    "vickrey", "m_r", "m_1", "m_w", "m_w2", "mod_1", "m_z", "m_f", "m_d", "m_t", "m_l",
)
NEGATIVE_CONTROL = "broken"

LEARN_FAMILY = {"uni": "uniform", "nor": "normal", "exp": "exponential", "ext": "uniform"}


@dataclass
class Setting:
    """Everything a mechanism may know ahead of the auction."""

    curve: DiscountCurve
    n: int
    dist: str = "Uni"
    B: float = 2.0
    rate: float = 1.0
    k: float = 1.0
    compare: str = "price"
    prior: ValuationDistribution | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.prior is None:
            self.prior = preset_distribution(self.dist, self.n)

    @property
    def grid(self) -> np.ndarray:
        return np.arange(1, self.n + 1, dtype=float) / self.rate

    @property
    def grid_discounts(self) -> np.ndarray:
        return self.curve.values(self.grid)

    def config(self, seed=0) -> MechanismConfig:
        return MechanismConfig(B=self.B, rate=self.rate, horizon=self.curve.horizon,
                               n=self.n, seed=seed, k=self.k, compare=self.compare)


class VickreyMechanism(Mechanism):
    """Offline second price, wrapped so the harness can run it like the rest."""

    name = "vickrey"

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        if record:
            return vickrey_offline(stream)
        r = stream.prices
        if r.size == 0:
            return _light_outcome(0, None, 0.0, r)
        pay = float(np.partition(r, -2)[-2]) if r.size >= 2 else 0.0
        return _light_outcome(r.size, int(np.argmax(r)), pay, r)


class BrokenMechanism(Mechanism):
    """Negative control: sells to the top bid and charges one more than the bid."""

    name = NEGATIVE_CONTROL

    def run(self, stream: BidStream, coins=None, record: bool = True) -> AuctionOutcome:
        r = stream.prices
        if r.size == 0:
            return no_sale(stream)
        w = int(np.argmax(r))
        pay = float(r[w]) + 1.0
        if not record:
            return _light_outcome(r.size, w, pay, r)
        return sale(stream, w + 1, pay, np.full(r.size, 5, dtype=np.int8))


def build_mechanism(name: str, setting: Setting, seed=0) -> Mechanism:
    """Instantiate ``name`` for ``setting``; heavy precomputation is cached."""
    key = name.lower()
    cache = setting._cache
    cfg = setting.config(seed)
    curve = setting.curve
    if key == "vickrey":
        return VickreyMechanism()
    if key == NEGATIVE_CONTROL:
        return BrokenMechanism()
    if key in ("m_r", "m_1", "m_w", "m_w2"):
        part = cache.get("partition")
        maker = {"m_r": randomized_select, "m_1": fixed_select,
                 "m_w": weighted_select, "m_w2": most_weighted_select}[key]
        mech = maker(curve, cfg, partition=part)
        cache["partition"] = mech.partition
        return mech
    if key == "mod_1":
        return ModifiedObserveDecide(curve, cfg)
    d = setting.grid_discounts
    if key == "m_z":
        if "Z" not in cache:
            cache["Z"] = expected_max_price(setting.prior, d)
        return KnownOptPosted(cache["Z"])
    if key == "m_f":
        if "m_f" not in cache:
            cache["m_f"] = FixedPrice.from_distribution(setting.prior, d)
        return cache["m_f"]
    if key == "m_d":
        if "m_d" not in cache:
            cache["m_d"] = dynamic_posted(setting.prior, d, setting.rate)
        return cache["m_d"]
    if key == "m_t":
        if "m_t" not in cache:
            cache["m_t"] = semi_truthful_posted(setting.prior, d, setting.rate)
        return cache["m_t"]
    if key == "m_l":
        fam = LEARN_FAMILY.get(setting.dist.lower(), "uniform")
        return LearningPosted(curve, setting.n, fam, rate=setting.rate)
    raise ValueError(f"unknown mechanism {name!r}; expected one of {MECHANISMS}")
