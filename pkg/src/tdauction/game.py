"""Adaptive bidding game against a mechanism that reveals acceptance odds."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np


class ProbeMechanism(Protocol):
    def acceptance_probability(self, round_index: int, bid: float, history: list) -> float:
        """Probability of accepting ``bid`` now, before the mechanism commits."""


@dataclass(frozen=True)
class ConstantProbe:
    """Always offers the same acceptance probability."""

    p: float

    def acceptance_probability(self, round_index, bid, history) -> float:
        return self.p


@dataclass(frozen=True)
class ThresholdProbe:
    """Accepts bids at or above ``threshold`` with ``p_high``, else ``p_low``."""

    threshold: float
    p_high: float
    p_low: float = 0.0

    def acceptance_probability(self, round_index, bid, history) -> float:
        return self.p_high if bid >= self.threshold else self.p_low


@dataclass(frozen=True)
class GameRound:
    bid: float
    p: float
    action: str  # escalate | hold | stop


@dataclass(frozen=True)
class GameTranscript:
    rounds: tuple[GameRound, ...]
    bids: np.ndarray
    vickrey: float
    mechanism_revenue: float
    mass: float

    @property
    def ratio(self) -> float:
        if self.mechanism_revenue <= 0:
            return float("inf") if self.vickrey > 0 else float("nan")
        return self.vickrey / self.mechanism_revenue


def run_adaptive_game(
    mechanism: ProbeMechanism | Callable[[int, float, list], float],
    n: int,
    K: float = 1e6,
    first_bid: float = 1.0,
) -> GameTranscript:
    """Play the escalation game for ``n`` rounds.

    Each round the mechanism states its acceptance probability ``p_i`` for the
    current bid (capped by the mass it has left).  A large ``p_i > 2/n`` makes
    the next bid ``K`` times bigger; a small one keeps it equal.  Two small
    rounds in a row with equal bids end the game and every later bid is 0.
    The mechanism's expected revenue is ``sum p_i b_i``; the offline benchmark
    is the second-highest bid.
    """
    if n < 1:
        raise ValueError("n must be positive")
    probe = mechanism.acceptance_probability if hasattr(mechanism, "acceptance_probability") \
        else mechanism
    bids = np.zeros(n)
    rounds: list[GameRound] = []
    mass = 0.0
    revenue = 0.0
    b = float(first_bid)
    prev_small = False
    for i in range(n):
        bids[i] = b
        p = min(max(float(probe(i, b, rounds)), 0.0), 1.0 - mass)
        mass += p
        revenue += p * b
        small = p <= 2.0 / n
        if not small:
            rounds.append(GameRound(b, p, "escalate"))
            b *= K
        elif prev_small and i > 0 and bids[i - 1] == b:
            rounds.append(GameRound(b, p, "stop"))
            break
        else:
            rounds.append(GameRound(b, p, "hold"))
        prev_small = small
    vick = float(np.sort(bids)[-2]) if n >= 2 else 0.0
    return GameTranscript(tuple(rounds), bids, vick, revenue, mass)
