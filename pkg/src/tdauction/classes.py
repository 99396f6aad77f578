"""Geometric discount classes and their time geometry."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .curves import DiscountCurve, DomainError

# Class id given to arrivals whose discount is exactly 0 (beyond every class).
BEYOND = np.iinfo(np.int64).max // 2


def class_of_discount(d: float, B: float) -> int:
    """Unique ``c >= 1`` with ``B**-c < d <= B**-(c-1)``."""
    if B <= 1:
        raise DomainError(f"B must exceed 1, got {B}")
    if not 0 < d <= 1:
        raise DomainError(f"discount must lie in (0, 1], got {d}")
    return int(classes_of(np.array([d]), B)[0])


def classes_of(d: np.ndarray, B: float) -> np.ndarray:
    """Vectorised :func:`class_of_discount`; ``d <= 0`` maps to ``BEYOND``."""
    d = np.asarray(d, dtype=float)
    out = np.full(d.shape, BEYOND, dtype=np.int64)
    pos = d > 0
    if not np.any(pos):
        return out
    dp = np.minimum(d[pos], 1.0)
    c = np.floor(-np.log(dp) / math.log(B)).astype(np.int64) + 1
    c = np.maximum(c, 1)
    # log rounding can land one class off at the boundaries
    c = np.where(dp <= np.power(B, -c.astype(float)), c + 1, c)
    c = np.where((c > 1) & (dp > np.power(B, -(c - 1).astype(float))), c - 1, c)
    out[pos] = c
    return out


def reserved_class_count(n: int, B: float, k: float = 1.0) -> int:
    """``ceil(4 log_B n + 3 + k log_B n)``."""
    if n < 2:
        raise DomainError(f"need n >= 2, got {n}")
    if B <= 1 or k < 0:
        raise DomainError("need B > 1 and k >= 0")
    lg = math.log(n) / math.log(B)
    return int(math.ceil((4 + k) * lg + 3 - 1e-9))


def class_time_interval(curve: DiscountCurve, c: int, B: float) -> tuple[float, float]:
    """Time preimage ``[t_lo, t_hi)`` of class ``c`` (normalised by ``d_max``).

    Empty classes come back with ``t_lo == t_hi``.  When the curve never
    leaves the class the interval runs to the horizon inclusive.
    """
    if c < 1:
        raise DomainError("class ids start at 1")
    dmax = curve.d_max()
    lo = 0.0 if c == 1 else curve.first_time_at_or_below(dmax * B ** -(c - 1))
    hi = curve.first_time_at_or_below(dmax * B**-c)
    if hi < lo:
        hi = lo
    return lo, hi


def class_weight(
    curve: DiscountCurve, c: int, B: float, rate: float, horizon: float | None = None
) -> float:
    """Sum of ``d(t_j)`` over grid points ``t_j = j / rate`` whose class is ``c``."""
    T = curve.horizon if horizon is None else horizon
    t = np.arange(1, int(math.floor(rate * T * (1 + 1e-12))) + 1) / rate
    d = curve.values(t)
    cls = classes_of(d / curve.d_max(), B)
    return float(d[cls == c].sum())


@dataclass(frozen=True)
class ClassRecord:
    c: int
    d_lo: float
    d_hi: float
    t_lo: float
    t_hi: float
    n_c: float
    w_c: float

    @property
    def weight_estimate(self) -> float:
        """Alternate weight ``n_c / B**c`` (``B`` recovered from the band)."""
        return self.n_c * self.d_lo


@dataclass(frozen=True)
class ClassPartition:
    """Reserved classes ``1..c_hat`` of a curve.

    ``scale`` is the ``d_max`` the curve was normalised by.
    """

    base: float
    reserved_count: int
    scale: float
    rate: float
    horizon: float
    records: tuple[ClassRecord, ...]

    def record(self, c: int) -> ClassRecord:
        return self.records[c - 1]

    @property
    def sizes(self) -> np.ndarray:
        return np.array([r.n_c for r in self.records])

    @property
    def weights(self) -> np.ndarray:
        return np.array([r.w_c for r in self.records])

    @property
    def tail_size(self) -> float:
        last = self.records[-1].t_hi if self.records else 0.0
        return self.rate * max(0.0, self.horizon - last)

    def slot_classes(self, curve: DiscountCurve, times: np.ndarray) -> np.ndarray:
        return classes_of(curve.values(times) / self.scale, self.base)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["c", "d_lo", "d_hi", "t_lo", "t_hi", "n_c", "w_c"])
        for r in self.records:
            w.writerow([r.c, repr(r.d_lo), repr(r.d_hi), repr(r.t_lo), repr(r.t_hi),
                        repr(r.n_c), repr(r.w_c)])
        return buf.getvalue()


def build_partition(
    curve: DiscountCurve,
    B: float = 2.0,
    rate: float = 1.0,
    n: int | None = None,
    k: float = 1.0,
    reserved: int | None = None,
) -> ClassPartition:
    """Compute the reserved-class geometry of ``curve``."""
    if B <= 1:
        raise DomainError(f"B must exceed 1, got {B}")
    T = curve.horizon
    if n is None:
        n = max(2, int(round(rate * T)))
    c_hat = reserved_class_count(max(n, 2), B, k) if reserved is None else int(reserved)
    scale = curve.d_max()
    t = np.arange(1, int(math.floor(rate * T * (1 + 1e-12))) + 1) / rate
    d = curve.values(t)
    cls = classes_of(d / scale, B)
    records = []
    for c in range(1, c_hat + 1):
        lo, hi = class_time_interval(curve, c, B)
        # the final class keeps the horizon itself
        length = hi - lo
        records.append(
            ClassRecord(
                c=c,
                d_lo=B**-c,
                d_hi=B ** -(c - 1),
                t_lo=lo,
                t_hi=hi,
                n_c=rate * length,
                w_c=float(d[cls == c].sum()),
            )
        )
    return ClassPartition(B, c_hat, scale, rate, T, tuple(records))


def imbalance_eta(partition: ClassPartition | np.ndarray) -> float | None:
    """``max n_c / min n_c`` over non-empty reserved classes, or ``None``."""
    sizes = partition.sizes if isinstance(partition, ClassPartition) else np.asarray(partition)
    sizes = sizes[sizes > 0]
    if sizes.size == 0:
        return None
    return float(sizes.max() / sizes.min())
