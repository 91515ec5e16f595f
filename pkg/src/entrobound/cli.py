"""Command-line front end.

    entrobound bounds    --spec FILE [--results LIST]
    entrobound empirical --spec FILE [--eps LIST] [--horizons LIST]
    entrobound verify    --spec FILE
    entrobound simulate  --spec FILE

Exit codes: 0 success, 1 numerical failure (domain error or unresolvable
candidate grid), 2 spec or usage error, 3 trajectory blow-up,
4 non-converged tail window (reports still written), 5 empirical
estimation asked for n > 2, 6 a verification check failed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bounds import (RESULT_IDS, BoundEngine, HorizonConfig, NotLinearError,
                     upper_bound_superset, write_bounds_csv)
from .empirical import (DimensionError, EmpiricalConfig, ResolutionError,
                        check_block_domination, check_measure_sandwich,
                        check_metzler_monotonicity, estimate_entropy,
                        verify_grid_spanning, verify_initial_time_invariance,
                        verify_liouville, verify_separation_bounds,
                        verify_volume_bound)
from .expr import DomainError, ExprSyntaxError
from .ode import BlowUpError, sample_ensemble, write_trajectory_csv
from .system import BoxSet, SpecError, load_spec, norm_tag
from .measures import NotMetzlerError

log = logging.getLogger("entrobound")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE = 2
EXIT_BLOWUP = 3
EXIT_NONCONVERGED = 4
EXIT_DIMENSION = 5
EXIT_VIOLATION = 6

_HORIZON_KEYS = {"t_max", "dt", "tail_fraction", "t1_list"}
_SAMPLING_KEYS = {"ensemble", "convex_combos", "seed"}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    spec: str
    out: str = "."
    seed: int = None
    t_max: float = None
    dt: float = None
    results: list = None
    eps: list = None
    horizons: list = None
    overrides: dict = field(default_factory=dict)
    verbose: int = 0


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _load(cfg: RunConfig):
    system, settings = load_spec(cfg.spec)
    for key, value in cfg.overrides.items():
        if key in _HORIZON_KEYS:
            settings.setdefault("horizon", {})[key] = value
        elif key in _SAMPLING_KEYS:
            settings.setdefault("sampling", {})[key] = value
        else:
            raise UsageError(f"unknown override key {key!r}")
    if cfg.seed is not None:
        settings.setdefault("sampling", {})["seed"] = str(cfg.seed)
    if cfg.t_max is not None:
        settings.setdefault("horizon", {})["t_max"] = repr(cfg.t_max)
    if cfg.dt is not None:
        settings.setdefault("horizon", {})["dt"] = repr(cfg.dt)
    return system, settings


def _default_results(system, settings):
    ids = ["measure_1", "measure_2", "measure_inf", "trace", "metzler"]
    if system.partition is not None and system.partition.m > 1:
        ids += ["network_measure", "network_metzler"]
    if settings.get("horizon", {}).get("t1_list", "").strip():
        ids += ["measure_t1_inf"]
        if system.partition is not None and system.partition.m > 1:
            ids += ["network_measure_t1", "network_metzler_t1"]
    if "superset" in settings:
        ids += ["superset_" + {"one": "1", "two": "2", "inf": "inf"}[norm_tag(p)]
                for p in settings["superset"].get("norms", "inf").split(",")]
    return ids


def _superset(system, settings, hcfg, rid):
    sec = settings.get("superset")
    if sec is None:
        raise UsageError(f"{rid} needs a [superset] section with lower and upper")
    S = BoxSet(_floats(sec["lower"]), _floats(sec["upper"]))
    t_lo = hcfg.tail_start(system.t0)
    t_grid = np.linspace(t_lo, hcfg.t_max, 201)
    points = int(sec["points"]) if "points" in sec else None
    return upper_bound_superset(system, S, rid.rsplit("_", 1)[1], t_grid, points)


def cmd_bounds(cfg: RunConfig) -> int:
    system, settings = _load(cfg)
    hcfg = HorizonConfig.from_settings(settings, system.t0)
    ids = cfg.results or _default_results(system, settings)
    unknown = [r for r in ids if r not in RESULT_IDS]
    if unknown:
        raise UsageError(f"unknown result ids {unknown}; known: {', '.join(RESULT_IDS)}")
    engine = BoundEngine(system, system.K, hcfg)
    reports = []
    for rid in ids:
        log.info("computing %s", rid)
        if rid.startswith("measure_t1_"):
            reports.append(engine.measure_t1(rid.rsplit("_", 1)[1]))
        elif rid.startswith("measure_"):
            reports.append(engine.measure(rid.rsplit("_", 1)[1]))
        elif rid == "trace":
            reports.append(engine.trace())
        elif rid == "metzler":
            reports.append(engine.metzler())
        elif rid == "ltv":
            reports.append(engine.ltv())
        elif rid == "network_measure":
            reports.append(engine.network_measure())
        elif rid == "network_metzler":
            reports.append(engine.network_metzler())
        elif rid == "network_measure_t1":
            reports.append(engine.network_measure_t1())
        elif rid == "network_metzler_t1":
            reports.append(engine.network_metzler_t1())
        else:
            reports.append(_superset(system, settings, hcfg, rid))
    os.makedirs(cfg.out, exist_ok=True)
    write_bounds_csv(os.path.join(cfg.out, "bounds.csv"), reports)
    text = "\n".join(r.to_text() for r in reports)
    with open(os.path.join(cfg.out, "bounds_summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    for r in reports:
        print(f"{r.result_id:22s} {r.bound:.10g}  [{'; '.join(r.qualifiers)}]")
    if not all(r.converged for r in reports):
        print("warning: non-converged tail window; bounds written", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _empirical_lists(cfg, settings):
    e = settings.get("empirical", {})
    eps = cfg.eps or (_floats(e["eps"]) if "eps" in e else None)
    hor = cfg.horizons or (_floats(e["horizons"]) if "horizons" in e else None)
    if not eps or not hor:
        raise UsageError("empirical needs radii and horizons (--eps/--horizons or [empirical])")
    return eps, hor


def cmd_empirical(cfg: RunConfig) -> int:
    system, settings = _load(cfg)
    if system.n > 2:
        raise DimensionError(f"empirical estimation supports n <= 2, got n = {system.n}")
    eps, hor = _empirical_lists(cfg, settings)
    ecfg = EmpiricalConfig.from_settings(settings)
    est = estimate_entropy(system, system.K, system.t0, eps, hor, ecfg)
    os.makedirs(cfg.out, exist_ok=True)
    est.write_csv(os.path.join(cfg.out, "entropy.csv"))
    lines = [f"estimate={est.estimate:.17g}", f"band={est.band:.17g}",
             f"method={est.method}", f"t0={system.t0:.17g}",
             "K=" + ",".join(f"{v:.17g}" for v in (*system.K.lower, *system.K.upper))]
    bad = est.self_consistency()
    lines += [f"{k}_violations={v}" for k, v in bad.items()]
    with open(os.path.join(cfg.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"entropy estimate {est.estimate:.6g} +/- {est.band:.3g} ({est.method})")
    return EXIT_OK


def cmd_verify(cfg: RunConfig) -> int:
    system, settings = _load(cfg)
    v = settings.get("verify", {})
    s = settings.get("sampling", {})
    seed = int(s.get("seed", 0))
    T = float(v.get("T", 2.0))
    slack = float(v.get("slack", 1e-6))
    pairs = int(v.get("pairs", 20))
    dt = float(v.get("dt", 0.01))
    t0 = system.t0
    reports = [
        verify_separation_bounds(system, system.K, t0, T, pairs, slack=slack, seed=seed, dt=dt),
        verify_liouville(system, system.K, t0, T, dt=min(dt, 1e-3), seed=seed),
        verify_grid_spanning(system, system.K, t0, float(v.get("grid_eps", 0.5)),
                             float(v.get("grid_T", min(T, 1.0))), dt=dt, seed=seed),
    ]
    if system.n <= 3:
        reports.append(verify_volume_bound(system, system.K, t0, T,
                                           int(v.get("mc_samples", 4000)), dt=dt, seed=seed))
    if "t1" in v and system.n <= 2:
        eps, hor = _empirical_lists(cfg, settings)
        reports.append(verify_initial_time_invariance(
            system, system.K, t0, float(v["t1"]), eps, hor, EmpiricalConfig.from_settings(settings)))
    reports += [check_measure_sandwich(seed=seed), check_metzler_monotonicity(seed=seed),
                check_block_domination(seed=seed)]
    text = "\n".join(r.line() for r in reports) + "\n"
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "verify.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_VIOLATION


def cmd_simulate(cfg: RunConfig) -> int:
    system, settings = _load(cfg)
    hcfg = HorizonConfig.from_settings(settings, system.t0)
    ens = sample_ensemble(system, system.K, hcfg.ensemble, hcfg.t_max, hcfg.dt, hcfg.seed)
    os.makedirs(cfg.out, exist_ok=True)
    for k in range(ens.count):
        write_trajectory_csv(os.path.join(cfg.out, f"traj_{k:03d}.csv"),
                             ens.times, ens.states[:, :, k])
    print(f"wrote {ens.count} trajectories with {ens.times.size} samples each to {cfg.out}")
    return EXIT_OK


COMMANDS = {"bounds": cmd_bounds, "empirical": cmd_empirical,
            "verify": cmd_verify, "simulate": cmd_simulate}


def build_parser():
    ap = argparse.ArgumentParser(prog="entrobound",
                                 description="Entropy bounds and estimates for nonlinear ODEs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--spec", required=True, help="system spec file")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--t-max", type=float, dest="t_max")
    ap.add_argument("--dt", type=float)
    ap.add_argument("--results", help="comma-separated result ids")
    ap.add_argument("--eps", help="comma-separated radii")
    ap.add_argument("--horizons", help="comma-separated horizons")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                    help="override a [horizon] or [sampling] key")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def parse_args(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    overrides = {}
    for item in ns.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, val = item.split("=", 1)
        overrides[k.strip()] = val.strip()
    return RunConfig(
        command=ns.command, spec=ns.spec, out=ns.out, seed=ns.seed, t_max=ns.t_max,
        dt=ns.dt, overrides=overrides, verbose=ns.verbose,
        results=[r.strip() for r in ns.results.split(",")] if ns.results else None,
        eps=_floats(ns.eps) if ns.eps else None,
        horizons=_floats(ns.horizons) if ns.horizons else None,
    )


def run(cfg: RunConfig) -> int:
    try:
        return COMMANDS[cfg.command](cfg)
    except ExprSyntaxError as exc:
        print(f"error: {cfg.spec}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (SpecError, UsageError, NotLinearError, NotMetzlerError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except BlowUpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except DimensionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSION
    except (ResolutionError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main(argv=None) -> int:
    try:
        cfg = parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbose, 2),
                        format="%(levelname)s %(message)s")
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
