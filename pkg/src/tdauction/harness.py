"""Monte Carlo experiments: paired mechanism-vs-Vickrey revenue estimates."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .coins import RandomCoins
from .curves import DiscountCurve, preset
from .distributions import extreme_values, preset_distribution
from .instances import sample_arrivals
from .market import BidStream, Transcript
from .registry import Setting, build_mechanism

PARALLEL_ENV = "TDAUCTION_WORKERS"
HORIZON = 2000.0
CSV_COLUMNS = (
    "mechanism", "curve", "dist", "n", "B", "lambda", "reps",
    "mean_rev", "mean_vickrey", "ratio", "ci95", "seed",
)


def _key(*parts) -> int:
    return zlib.crc32("|".join(str(p) for p in parts).encode())


@dataclass
class ExperimentConfig:
    """One sweep: the cartesian product of mechanisms, curves, laws and sizes.

    ``reps = None`` means ``10 * n`` replications per cell.  ``rate = None``
    sets ``n / horizon`` so that ``n`` buyers are expected.
    """

    mechanisms: list[str]
    curves: list[str] = field(default_factory=lambda: ["D1"])
    dists: list[str] = field(default_factory=lambda: ["Uni"])
    ns: list[int] = field(default_factory=lambda: [1000])
    B: float = 2.0
    rate: float | None = None
    horizon: float = HORIZON
    reps: int | None = None
    seed: int = 0
    workers: int | None = None
    arrivals: str = "grid"
    k: float = 1.0
    compare: str = "price"
    keep_transcripts: bool = False
    curve_params: dict = field(default_factory=dict)

    def reps_for(self, n: int) -> int:
        return 10 * n if self.reps is None else int(self.reps)

    def rate_for(self, n: int) -> float:
        return n / self.horizon if self.rate is None else float(self.rate)


@dataclass
class CellResult:
    mechanism: str
    curve: str
    dist: str
    n: int
    B: float
    lam: float
    reps: int
    mean_rev: float
    mean_vickrey: float
    ratio: float
    ci95: float
    seed: int
    rev_ci95: float = 0.0
    vickrey_ci95: float = 0.0
    ir_violations: int = 0
    failed: bool = False
    failed_seed: int | None = None
    error: str = ""
    wall_time: float = 0.0

    def csv_row(self) -> list:
        return [self.mechanism, self.curve, self.dist, self.n, repr(self.B), repr(self.lam),
                self.reps, repr(self.mean_rev), repr(self.mean_vickrey), repr(self.ratio),
                repr(self.ci95), self.seed]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    cells: list[CellResult]
    transcripts: dict = field(default_factory=dict)

    def cell(self, mechanism: str, **where) -> CellResult:
        for c in self.cells:
            if c.mechanism == mechanism and all(getattr(c, k) == v for k, v in where.items()):
                return c
        raise KeyError((mechanism, where))

    @property
    def failed(self) -> list[CellResult]:
        return [c for c in self.cells if c.failed]

    @property
    def ir_violations(self) -> int:
        return sum(c.ir_violations for c in self.cells)

    def to_csv(self, header_lines: list[str] = ()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for c in self.cells:
            w.writerow(c.csv_row())
        return buf.getvalue()

    def to_json(self, meta: dict | None = None) -> str:
        cfg = asdict(self.config)
        return json.dumps({"meta": meta or {}, "config": cfg,
                           "cells": [asdict(c) for c in self.cells]}, indent=1)


def ratio_ci(rev: np.ndarray, vick: np.ndarray) -> tuple[float, float]:
    """Ratio of means and its 95% half-width by the delta method."""
    R = rev.size
    mv, mr = vick.mean(), rev.mean()
    if mv <= 0:
        return (float("nan"), float("nan"))
    rho = mr / mv
    if R < 2:
        return float(rho), float("nan")
    cov = np.cov(rev, vick)
    var = (cov[0, 0] - 2 * rho * cov[0, 1] + rho * rho * cov[1, 1]) / (mv * mv * R)
    return float(rho), float(1.96 * math.sqrt(max(var, 0.0)))


def mean_ci(x: np.ndarray) -> float:
    if x.size < 2:
        return float("nan")
    return float(1.96 * x.std(ddof=1) / math.sqrt(x.size))


def make_curve(name: str, horizon: float, rate: float, n: int, params: dict | None = None):
    params = dict(params or {})
    if name.upper() == "D6":
        params.setdefault("n", n)
        # tail level low enough that n^4 * eps stays below every undiscounted price
        params.setdefault("eps", min(1e-9, float(n) ** -5))
    return preset(name, horizon=horizon, rate=rate, **params)


def _setting_task(args) -> tuple[list[CellResult], dict]:
    cfg, curve_name, dist, n = args
    return run_setting(cfg, curve_name, dist, n)


def run_setting(cfg: ExperimentConfig, curve_name: str, dist: str, n: int):
    """All mechanisms of one (curve, law, n) setting on shared streams."""
    rate = cfg.rate_for(n)
    curve = make_curve(curve_name, cfg.horizon, rate, n, cfg.curve_params.get(curve_name))
    setting = Setting(curve, n, dist, cfg.B, rate, cfg.k, cfg.compare)
    reps = cfg.reps_for(n)
    skey = _key(curve_name, dist, n, cfg.B, rate)
    results: list[CellResult] = []
    transcripts: dict = {}
    law = None if dist.lower() == "ext" else preset_distribution(dist)
    grid_t = np.arange(1, n + 1, dtype=float) / rate
    grid_d = curve.values(grid_t)
    mechs = {}
    errors = {}
    for name in cfg.mechanisms:
        try:
            mechs[name] = build_mechanism(name, setting, seed=0)
        except Exception as exc:  # recorded against the cell, never dropped
            errors[name] = f"setup: {exc!r}"
    rev = {m: np.zeros(reps) for m in cfg.mechanisms}
    viol = {m: 0 for m in cfg.mechanisms}
    fail = {m: None for m in cfg.mechanisms}
    wall = {m: 0.0 for m in cfg.mechanisms}
    vick = np.zeros(reps)
    for i in range(reps):
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(skey, i))
        rng = np.random.default_rng(ss)
        if cfg.arrivals == "grid":
            t, d = grid_t, grid_d
        else:
            t = sample_arrivals(rate, cfg.horizon, "poisson", rng)
            d = curve.values(t)
        m_arr = t.size
        if law is None:
            v = rng.permutation(extreme_values(n))[:m_arr]
            if m_arr > n:
                v = np.concatenate([v, np.zeros(m_arr - n)])
        else:
            v = law.sample(rng, m_arr)
        stream = BidStream(t, v * d)
        r = stream.prices
        vick[i] = float(np.partition(r, -2)[-2]) if r.size >= 2 else 0.0
        for name, mech in mechs.items():
            if fail[name] is not None:
                continue
            coin_seed = int(np.random.SeedSequence(cfg.seed, spawn_key=(skey, i, _key(name)))
                            .generate_state(1)[0])
            t0 = time.perf_counter()
            try:
                keep = cfg.keep_transcripts and i == 0
                out = mech.run(stream, RandomCoins(coin_seed), record=keep)
            except Exception as exc:
                fail[name] = coin_seed
                errors[name] = f"replication {i}: {exc!r}"
                continue
            wall[name] += time.perf_counter() - t0
            rev[name][i] = out.revenue
            if out.winner is not None and out.payment > r[out.winner - 1]:
                viol[name] += 1
            if keep:
                transcripts[(name, curve_name, dist, n)] = out.transcript
    for name in cfg.mechanisms:
        ratio, ci = ratio_ci(rev[name], vick)
        results.append(
            CellResult(
                mechanism=name, curve=curve_name, dist=dist, n=n, B=cfg.B, lam=rate,
                reps=reps, mean_rev=float(rev[name].mean()), mean_vickrey=float(vick.mean()),
                ratio=ratio, ci95=ci, seed=cfg.seed, rev_ci95=mean_ci(rev[name]),
                vickrey_ci95=mean_ci(vick), ir_violations=viol[name],
                failed=name in errors, failed_seed=fail[name], error=errors.get(name, ""),
                wall_time=wall[name],
            )
        )
    return results, transcripts


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentReport:
    """Run every cell; results do not depend on the worker count."""
    tasks = [(cfg, c, d, n) for c in cfg.curves for d in cfg.dists for n in cfg.ns]
    workers = cfg.workers or int(os.environ.get(PARALLEL_ENV, "1"))
    cells: list[CellResult] = []
    transcripts: dict = {}
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outs = list(pool.map(_setting_task, tasks))
    else:
        outs = []
        for task in tasks:
            outs.append(_setting_task(task))
            if progress:
                progress(f"{task[1]}/{task[2]}/n={task[3]} done")
    for res, tr in outs:
        cells.extend(res)
        transcripts.update(tr)
    return ExperimentReport(cfg, cells, transcripts)


def ir_audit(transcripts) -> list[tuple]:
    """Accept records whose payment exceeds the reported price.

    Accepts a single transcript, a list of them, or a mapping of key to
    transcript; returns ``(key, slot, price, payment)`` per violation.
    """
    if isinstance(transcripts, Transcript):
        transcripts = {None: transcripts}
    elif not isinstance(transcripts, dict):
        transcripts = dict(enumerate(transcripts))
    bad = []
    for key, tr in transcripts.items():
        for rec in tr:
            if rec.accepted and rec.payment > rec.price:
                bad.append((key, rec.slot, rec.price, rec.payment))
    return bad
