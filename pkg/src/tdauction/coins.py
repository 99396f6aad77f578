"""Sources of mechanism randomness.

Mechanisms draw every coin through ``choice(probs)`` before processing any
event.  Swapping the source lets the same code run Monte Carlo (seeded RNG)
or exact enumeration over every coin outcome.
"""

from __future__ import annotations

from typing import Callable, Protocol, Sequence, TypeVar

import numpy as np

T = TypeVar("T")


class Coins(Protocol):
    def choice(self, probs: Sequence[float]) -> int: ...


class RandomCoins:
    """Coins backed by ``numpy.random.default_rng`` (PCG64)."""

    def __init__(self, seed=None):
        self.rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    def choice(self, probs: Sequence[float]) -> int:
        p = np.asarray(probs, dtype=float)
        cum = np.cumsum(p)
        u = self.rng.random() * cum[-1]
        return int(min(np.searchsorted(cum, u, side="right"), p.size - 1))


class ScriptedCoins:
    """Replays a fixed list of outcomes (0 once the script runs out)."""

    def __init__(self, script: Sequence[int] = ()):
        self.script = list(script)
        self.calls: list[tuple[int, float, int]] = []  # (choice, prob, branching)

    def choice(self, probs: Sequence[float]) -> int:
        k = len(self.calls)
        idx = self.script[k] if k < len(self.script) else 0
        self.calls.append((idx, float(probs[idx]), len(probs)))
        return idx


def enumerate_outcomes(run: Callable[[ScriptedCoins], T]) -> list[tuple[float, T]]:
    """Run ``run`` under every coin sequence; return ``(probability, result)``.

    Branches with zero probability are skipped.
    """
    out: list[tuple[float, T]] = []
    stack: list[list[int]] = [[]]
    while stack:
        prefix = stack.pop()
        coins = ScriptedCoins(prefix)
        result = run(coins)
        prob = 1.0
        for _, p, _ in coins.calls:
            prob *= p
        if prob > 0:
            out.append((prob, result))
        for pos in range(len(prefix), len(coins.calls)):
            base = [c for c, _, _ in coins.calls[:pos]]
            for alt in range(1, coins.calls[pos][2]):
                stack.append(base + [alt])
    return out
