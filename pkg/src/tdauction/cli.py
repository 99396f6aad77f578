"""Command-line front end.

Exit codes: 0 ok, 1 usage or bad config, 2 a cell failed, 3 an IR
violation was found, 4 a documented-truthful mechanism failed a probe.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys

import numpy as np

from . import __version__
from .classes import class_of_discount
from .curves import DomainError, preset, step_curve
from .distributions import ValuationDistribution, preset_distribution
from .game import ConstantProbe, run_adaptive_game
from .harness import ExperimentConfig, make_curve, run_experiment
from .instances import INSTANCE_PRESETS, make_preset_instance
from .market import MarketInstance, exact_expected_vickrey
from .posted import semi_truthful_schedule
from .probes import Deviation, is_regression, truthfulness_probe
from .registry import MECHANISMS, NEGATIVE_CONTROL, Setting, build_mechanism

EXIT_OK, EXIT_USAGE, EXIT_CELL, EXIT_IR, EXIT_TRUTH = 0, 1, 2, 3, 4

PRESETS = {
    "fig-ratios": {
        "mech": "m_r,m_w,m_1,m_w2,m_f,m_d,m_t,m_z",
        "curve": "D1,D2,D3,D4,D5,D6",
        "dist": "Uni,Nor,Exp,Ext",
        "n": "1000..5000:500",
    },
    "ir-sweep": {
        "mech": ",".join(MECHANISMS),
        "curve": "D1,D2,D3,D4,D5,D6",
        "dist": "Uni,Nor,Exp,Ext",
        "n": "1000",
        "reps": "20",
    },
}

# config-file keys, each mirrored by a --flag of the same name
CONFIG_KEYS = {
    "mech", "curve", "dist", "n", "B", "lambda", "horizon", "reps", "seed", "out",
    "format", "workers", "compare", "arrivals", "k",
}


class UsageError(Exception):
    pass


def parse_n(text: str) -> list[int]:
    """``"1000"`` or ``"1000..5000:500"`` (inclusive)."""
    text = str(text).strip()
    if ".." in text:
        lo, rest = text.split("..", 1)
        hi, _, step = rest.partition(":")
        step = int(step) if step else 1
        if step <= 0:
            raise UsageError("n step must be positive")
        return list(range(int(lo), int(hi) + 1, step))
    return [int(v) for v in text.split(",")]


def read_config(path: str) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    try:
        lines = open(path).read().splitlines()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from exc
    for no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{no}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{no}: unknown key {key!r}")
        out[key] = val
    return out


def effective(args, defaults: dict) -> dict:
    """Defaults < preset < config file < explicit flags."""
    eff = dict(defaults)
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        eff.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        eff.update(read_config(args.config))
    for key in CONFIG_KEYS:
        val = getattr(args, key.replace("lambda", "lam"), None)
        if val is not None:
            eff[key] = str(val)
    return eff


def header(cmd: str, eff: dict) -> list[str]:
    lines = [f"tdauction {__version__} {cmd}"]
    lines += [f"{k} = {eff[k]}" for k in sorted(eff) if eff[k] is not None]
    return lines


def emit(text: str, out: str | None) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _comment(lines) -> str:
    return "".join(f"# {l}\n" for l in lines)


# -- subcommands ------------------------------------------------------------------


def cmd_experiment(args) -> int:
    eff = effective(args, {"mech": "vickrey", "curve": "D1", "dist": "Uni", "n": "1000",
                           "B": "2", "horizon": "2000", "seed": "0", "format": "csv",
                           "compare": "price", "arrivals": "grid", "k": "1"})
    try:
        mechs = [m.strip() for m in eff["mech"].split(",")]
        for m in mechs:
            if m not in MECHANISMS and m != NEGATIVE_CONTROL:
                raise UsageError(f"unknown mechanism {m!r}; choose from {MECHANISMS}")
        cfg = ExperimentConfig(
            mechanisms=mechs,
            curves=[c.strip().upper() for c in eff["curve"].split(",")],
            dists=[d.strip() for d in eff["dist"].split(",")],
            ns=parse_n(eff["n"]),
            B=float(eff["B"]),
            rate=float(eff["lambda"]) if eff.get("lambda") else None,
            horizon=float(eff["horizon"]),
            reps=int(eff["reps"]) if eff.get("reps") else None,
            seed=int(eff["seed"]),
            workers=int(eff["workers"]) if eff.get("workers") else None,
            compare=eff["compare"],
            arrivals=eff["arrivals"],
            k=float(eff["k"]),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    report = run_experiment(cfg, progress=lambda msg: print(msg, file=sys.stderr))
    lines = header("experiment", eff)
    if eff["format"] == "json":
        emit(report.to_json({"header": lines}) + "\n", eff.get("out"))
    else:
        emit(report.to_csv(lines), eff.get("out"))
    for c in report.failed:
        print(f"cell failed: {c.mechanism}/{c.curve}/{c.dist}/n={c.n} seed={c.failed_seed}: "
              f"{c.error}", file=sys.stderr)
    if report.failed:
        return EXIT_CELL
    if report.ir_violations:
        print(f"IR violations: {report.ir_violations}", file=sys.stderr)
        return EXIT_IR
    return EXIT_OK


def _instance_from_args(args) -> MarketInstance:
    params = {}
    for kv in args.param or []:
        k, _, v = kv.partition("=")
        params[k] = float(v) if "." in v or "e" in v else int(v)
    if args.n is not None:
        params["n"] = int(parse_n(args.n)[0])
    return make_preset_instance(args.instance, **params)


def cmd_instance(args) -> int:
    inst = _instance_from_args(args)
    doc = inst.to_dict()
    doc["meta"] = header("instance", {"instance": args.instance, "n": args.n,
                                      "param": ",".join(args.param or [])})
    emit(json.dumps(doc) + "\n", args.out)
    return EXIT_OK


def _probe_instance(args, n: int):
    curve_name = (args.curve or "D1").upper()
    horizon = float(n) if args.horizon is None else float(args.horizon)
    rate = n / horizon
    curve = preset(curve_name, horizon=horizon, rate=rate) if curve_name != "D6" else \
        make_curve("D6", horizon, rate, n)
    if args.values:
        v = np.array([float(x) for x in args.values.split(",")])
        if v.size != n:
            raise UsageError("--values must list exactly n valuations")
    prior = _dist_from_name(args.dist or "Uni", n)
    if not args.values:
        rng = np.random.default_rng(int(args.seed or 0))
        v = prior.sample(rng, n)
    t = np.arange(1, n + 1, dtype=float) / rate
    setting = Setting(curve, n, args.dist or "Uni", float(args.B or 2), rate, prior=prior)
    return MarketInstance(v, t, curve, rate, horizon), setting


def cmd_probe(args) -> int:
    mech_name = args.mech
    if mech_name not in MECHANISMS:
        raise UsageError(f"unknown mechanism {mech_name!r}; choose from {MECHANISMS}")
    n = int(parse_n(args.n)[0]) if args.n else 6
    inst, setting = _probe_instance(args, n)
    mech = build_mechanism(mech_name, setting)
    devs = []
    if args.deviation in ("scale", "all"):
        devs += [Deviation(f, 0) for f in (0.5, 0.9, 1.1, 2.0)]
    if args.deviation in ("delay", "all"):
        devs += [Deviation(1.0, d) for d in (1, 2)]
    B = setting.B
    scale = inst.curve.d_max()
    class_of = lambda t: class_of_discount(max(float(inst.curve.values(t)) / scale, 1e-300), B)
    verdicts = truthfulness_probe(
        mech, inst, target=int(np.argmax(inst.valuations)) if args.target is None else args.target,
        target_slot=int(args.slot), deviations=devs, exact=True if args.exact else None,
        reps=int(args.reps or 2000), seed=int(args.seed or 0), class_of=class_of,
    )
    buf = io.StringIO()
    buf.write(_comment(header("probe", {"mech": mech_name, "n": n, "curve": args.curve or "D1",
                                        "dist": args.dist or "Uni", "seed": args.seed or 0,
                                        "deviation": args.deviation, "exact": bool(args.exact)})))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mechanism", "deviation", "kind", "target_slot", "truthful", "deviant",
                "ci95", "verdict", "exact"])
    for v in verdicts:
        w.writerow([v.mechanism, v.deviation.label(), v.kind, v.target_slot,
                    repr(v.truthful_utility), repr(v.deviant_utility), repr(v.diff_ci),
                    v.verdict, v.exact])
    emit(buf.getvalue(), args.out)
    return EXIT_TRUTH if any(is_regression(v) for v in verdicts) else EXIT_OK


def cmd_game(args) -> int:
    n = int(parse_n(args.n)[0]) if args.n else 100
    rows = []
    for p in [float(eval_fraction(x, n)) for x in args.p.split(",")]:
        g = run_adaptive_game(ConstantProbe(p), n, float(args.K))
        rows.append([repr(p), n, repr(float(args.K)), len(g.rounds), repr(g.vickrey),
                     repr(g.mechanism_revenue), repr(g.ratio), repr(g.mass)])
    buf = io.StringIO()
    buf.write(_comment(header("game", {"p": args.p, "n": n, "K": args.K})))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "n", "K", "rounds", "vickrey", "mechanism", "ratio", "mass"])
    w.writerows(rows)
    emit(buf.getvalue(), args.out)
    return EXIT_OK


def eval_fraction(text: str, n: int) -> float:
    """``0.25``, ``1/4`` or ``2/n``."""
    text = text.strip().replace("n", str(n))
    if "/" in text:
        a, b = text.split("/", 1)
        return float(a) / float(b)
    return float(text)


def _dist_from_name(name: str, n: int) -> ValuationDistribution:
    key = name.lower()
    if key in ("uniform", "uniform01"):
        return ValuationDistribution.uniform(0.0, 1.0)
    try:
        return preset_distribution(name, n)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_schedule(args) -> int:
    if args.d:
        d = np.array([float(x) for x in args.d.split(",") if x.strip()])
        n = d.size
    else:
        n = int(parse_n(args.n)[0]) if args.n else 0
        curve_name = (args.curve or "D4").upper()
        horizon = float(args.horizon) if args.horizon else max(float(n), 1.0)
        d = preset(curve_name, horizon=horizon, rate=n / horizon if n else 1.0).values(
            np.arange(1, n + 1) * horizon / max(n, 1)
        )
    dist = _dist_from_name(args.dist or "uniform", max(n, 2))
    sched = semi_truthful_schedule(dist, d)
    text = _comment(header("schedule", {"dist": args.dist or "uniform",
                                        "curve": args.curve, "d": args.d, "n": n}))
    emit(text + sched.to_csv(), args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    if args.instance:
        inst = _instance_from_args(args)
    else:
        if not args.values:
            raise UsageError("oracle needs --instance or --values")
        v = np.array([float(x) for x in args.values.split(",")])
        n = v.size
        if args.d:
            d = [float(x) for x in args.d.split(",")]
            if len(d) != n:
                raise UsageError("--d must have one discount per value")
            curve = step_curve(float(n), [(j + 1.0, dj) for j, dj in enumerate(d)])
        else:
            curve = preset((args.curve or "D4").upper(), horizon=float(n))
        inst = MarketInstance(v, np.arange(1, n + 1, dtype=float), curve, 1.0, float(n))
    try:
        val = exact_expected_vickrey(inst)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    emit(_comment(header("oracle", {"n": inst.n})) + f"exact_expected_vickrey,{val!r}\n",
         args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdauction", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"tdauction {__version__}")
    sub = p.add_subparsers(dest="cmd", required=True)

    e = sub.add_parser("experiment", help="Monte Carlo revenue ratios against Vickrey")
    e.add_argument("--config", help="flat key = value file; flags override it")
    e.add_argument("--preset", help=f"one of {sorted(PRESETS)}")
    e.add_argument("--mech")
    e.add_argument("--curve")
    e.add_argument("--dist")
    e.add_argument("--n", help="value, comma list or lo..hi:step")
    e.add_argument("--B")
    e.add_argument("--lambda", dest="lam")
    e.add_argument("--horizon")
    e.add_argument("--reps")
    e.add_argument("--seed")
    e.add_argument("--workers")
    e.add_argument("--compare", choices=["price", "valuation"])
    e.add_argument("--arrivals", choices=["grid", "poisson"])
    e.add_argument("--k")
    e.add_argument("--out")
    e.add_argument("--format", choices=["csv", "json"])
    e.set_defaults(func=cmd_experiment)

    i = sub.add_parser("instance", help="emit an adversarial instance as JSON")
    i.add_argument("--instance", required=True, choices=INSTANCE_PRESETS)
    i.add_argument("--n")
    i.add_argument("--param", action="append", help="extra key=value (k, K, B, x, c, t, eps)")
    i.add_argument("--out")
    i.set_defaults(func=cmd_instance)

    pr = sub.add_parser("probe", help="truthfulness deviation probes")
    pr.add_argument("--mech", required=True)
    pr.add_argument("--deviation", choices=["scale", "delay", "all"], default="all")
    pr.add_argument("--curve")
    pr.add_argument("--dist")
    pr.add_argument("--values", help="comma-separated valuations (default: sampled)")
    pr.add_argument("--n")
    pr.add_argument("--B")
    pr.add_argument("--horizon")
    pr.add_argument("--target", type=int, help="valuation index of the probed buyer")
    pr.add_argument("--slot", default=1, help="slot of the probed buyer (1-based)")
    pr.add_argument("--exact", action="store_true")
    pr.add_argument("--reps")
    pr.add_argument("--seed")
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_probe)

    g = sub.add_parser("game", help="escalation game against constant-probability probes")
    g.add_argument("--p", default="1/n,2/n,1/4,1")
    g.add_argument("--n")
    g.add_argument("--K", default="1e6")
    g.add_argument("--out")
    g.set_defaults(func=cmd_game)

    s = sub.add_parser("schedule", help="posted-price thresholds and payments as CSV")
    s.add_argument("--dist", help="uniform (on [0,1]), Uni, Nor, Exp or Ext")
    s.add_argument("--curve")
    s.add_argument("--d", help="explicit comma-separated discounts")
    s.add_argument("--n")
    s.add_argument("--horizon")
    s.add_argument("--out")
    s.set_defaults(func=cmd_schedule)

    o = sub.add_parser("oracle", help="exact expected Vickrey revenue (n <= 8)")
    o.add_argument("--instance", choices=INSTANCE_PRESETS)
    o.add_argument("--n")
    o.add_argument("--param", action="append")
    o.add_argument("--values")
    o.add_argument("--d")
    o.add_argument("--curve")
    o.add_argument("--out")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, DomainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
