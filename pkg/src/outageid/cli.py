"""Command-line entry point: ``outageid identify|sweep|demo4|bench``.

Exit codes: 0 conclusive (or success), 3 inconclusive, 4 and above for errors.
Angles at this boundary are degrees, magnitudes per-unit.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import statistics
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .identify import Observation, Placement, apply_filter, rank_candidates
from .montecarlo import (
    DEFAULT_SIGMA_THETA_DEG,
    DEFAULT_SIGMA_V,
    ExperimentConfig,
    NoiseModel,
    prepare,
    run_experiment,
    sample_noise,
    scatter_demo,
    synthesize_observation,
)
from .netmodel import CaseError, ValidationError, load_case, remove_branch
from .powerflow import PowerFlowSolution, SolverOptions, solve_ac
from .scenario import candidate_outages

log = logging.getLogger("outageid")

EXIT_OK = 0
EXIT_INCONCLUSIVE = 3
EXIT_ERROR = 4
EXIT_USAGE = 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def tool_version() -> str:
    try:
        return version("artifact")
    except PackageNotFoundError:
        return "0+unknown"


def parse_float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def parse_int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def parse_epsilon_grid(text: str) -> list[float]:
    """``lo:hi:step`` (inclusive of ``hi``) or a comma list."""
    if ":" not in text:
        return parse_float_list(text)
    lo, hi, step = (float(x) for x in text.split(":"))
    if step <= 0 or hi < lo:
        raise UsageError(f"bad epsilon grid {text!r}")
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 12) for i in range(n + 1)]


def read_config(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------------------
# identify


def _placement_from_flag(net, pmus: str | None) -> Placement:
    if not pmus or pmus == "all":
        return Placement(tuple(range(net.n_bus)))
    try:
        return Placement(tuple(net.bus_index(b) for b in parse_int_list(pmus)))
    except KeyError as exc:
        raise UsageError(str(exc)) from None


def _read_observation(path, net, placement: Placement) -> Observation:
    """CSV with columns ``bus_id,vm_pre,va_pre_deg,vm_post,va_post_deg``."""
    rows = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows[net.bus_index(int(r["bus_id"]))] = r
    missing = [net.external_ids[b] for b in placement.buses if b not in rows]
    if missing:
        raise UsageError(f"observation file lacks PMU buses {missing}")

    def phasor(r, which):
        return float(r[f"vm_{which}"]) * np.exp(1j * math.radians(float(r[f"va_{which}_deg"])))

    v_pre = [phasor(rows[b], "pre") for b in placement.buses]
    v_post = [phasor(rows[b], "post") for b in placement.buses]
    return Observation(placement, np.array(v_pre), np.array(v_post))


def cmd_identify(args) -> int:
    net = load_case(args.case)
    placement = _placement_from_flag(net, args.pmus)
    prep = prepare(net, args.include_transformers, args.mode)
    sigs = prep.dc if args.mode == "dc" else prep.ac
    if args.observation:
        obs = _read_observation(args.observation, net, placement)
    elif args.outage is not None:
        if args.outage not in prep.ac.candidates:
            raise UsageError(f"branch {args.outage} is not a candidate outage")
        post = prep.ac.post_voltage(args.outage)
        post_sol = PowerFlowSolution(np.abs(post), np.angle(post), True, 0, 0.0)
        noise = NoiseModel(args.sigma_v, args.sigma_theta, args.seed)
        table = sample_noise(noise, net.n_bus, 1)[0]
        obs = synthesize_observation(prep.base, post_sol, table[:, 0], table[:, 1], placement)
    else:
        raise UsageError("give --observation FILE or --outage BRANCH")
    ranking = rank_candidates(sigs, obs, args.metric)
    verdict = apply_filter(ranking, args.epsilon)

    print(f"mode={args.mode} P={placement.P} L={len(ranking)} epsilon={args.epsilon:g}")
    print("rank  branch  E")
    for i, (bid, e) in enumerate(ranking.head(5), start=1):
        print(f"{i:>4}  {bid:>6}  {e:.6e}")
    print(f"identified={verdict.identified} E1={verdict.E1:.6e} E2={verdict.E2:.6e} "
          f"delta_E={verdict.delta_E:.6e} conclusive={verdict.conclusive}")
    return EXIT_OK if verdict.conclusive else EXIT_INCONCLUSIVE


# ---------------------------------------------------------------------------
# sweep

SWEEP_KEYS = {
    "case", "mode", "coverage", "P", "pmus", "placements", "realizations", "epsilon_grid", "epsilon",
    "seed", "noise_seed", "sigma_v", "sigma_theta", "include_transformers", "jobs", "out_dir",
    "metric", "exact_pre", "trials",
}


def _sweep_settings(args) -> dict:
    settings: dict = {}
    if args.config:
        cfg = read_config(args.config)
        unknown = sorted(set(cfg) - SWEEP_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(cfg)
    for key in SWEEP_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def build_experiment_config(settings: dict) -> ExperimentConfig:
    def get(key, conv, default):
        v = settings.get(key)
        return default if v is None else conv(v)

    as_list = lambda conv: (lambda v: v if isinstance(v, (list, tuple)) else conv(v))  # noqa: E731
    eps = get("epsilon_grid", as_list(parse_epsilon_grid), None)
    if eps is None:
        eps = get("epsilon", as_list(parse_float_list), [0.0])
    seed = get("seed", int, 0)
    return ExperimentConfig(
        case=str(get("case", str, "case_ieee30")),
        mode=get("mode", str, "ac"),
        coverage=tuple(get("coverage", as_list(parse_float_list), [])),
        P=tuple(get("P", as_list(parse_int_list), [])),
        pmus=tuple(get("pmus", as_list(parse_int_list), [])),
        placements=get("placements", int, 1000),
        realizations=get("realizations", int, 100),
        epsilon_grid=tuple(eps),
        noise=NoiseModel(get("sigma_v", float, DEFAULT_SIGMA_V), get("sigma_theta", float, DEFAULT_SIGMA_THETA_DEG),
                         get("noise_seed", int, seed)),
        include_transformers=get("include_transformers", _bool, True),
        seed=seed,
        metric=get("metric", str, "complex"),
        independent_pre_noise=not get("exact_pre", _bool, False),
    )


def cmd_sweep(args) -> int:
    settings = _sweep_settings(args)
    cfg = build_experiment_config(settings)
    jobs = int(settings.get("jobs", 1))
    out_dir = Path(settings.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    want_trials = _bool(settings.get("trials", False))

    t0 = time.perf_counter()
    result = run_experiment(cfg, jobs=jobs, keep_trials=want_trials)
    result.to_csv(out_dir / "results.csv")
    if want_trials:
        for store in result.trials:
            store.write_csv(out_dir / f"trials_P{store.P}.csv")

    manifest = {
        "schema": 1,
        "tool_version": tool_version(),
        "config_digest": cfg.digest(),
        "config": json.loads(json.dumps(dataclasses.asdict(cfg), default=str)),
        "seeds": {"master": cfg.seed, "noise": cfg.noise.seed},
        "jobs": jobs,
        "timings_s": {**result.metadata.get("timings", {}), "total": time.perf_counter() - t0},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    for r in result.rows:
        print(f"P={r['P']:>3} eps={r['epsilon']:<10g} correct={r['rate_correct']:.4f} "
              f"mis={r['rate_misidentified']:.4f} cf={r['rate_correct_filtered']:.4f} "
              f"mf={r['rate_misidentified_filtered']:.4f} n={r['n_trials']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo4


def cmd_demo4(args) -> int:
    net = load_case(args.case)
    noise = NoiseModel(args.sigma_v, args.sigma_theta, args.seed)
    monitored = net.bus_index(args.bus)
    demo = scatter_demo(net, args.realizations, noise, args.actual, args.rival, monitored)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["realization", "d_re", "d_im", "exp_actual_re", "exp_actual_im",
                    "exp_rival_re", "exp_rival_im", "nearest_branch", "closer_to_rival"])
        a, r = demo.expected_actual, demo.expected_rival
        for i, d in enumerate(demo.observed):
            w.writerow([i] + [repr(float(v)) for v in (d.real, d.imag, a.real, a.imag, r.real, r.imag)] + [
                        int(demo.nearest[i]), int(demo.closer_to_rival[i])])
    finally:
        if args.out:
            out.close()
    print(f"misidentified fraction (closer to branch {args.rival}): {demo.misidentified_fraction:.4f}",
          file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def benchmark(case: str, repetitions: int, jobs: int = 1, seed: int = 0) -> dict:
    if repetitions < 1:
        raise UsageError("repetitions must be >= 1")
    net = load_case(case)
    base = solve_ac(net)
    cands = candidate_outages(net)

    solve_times = []
    for i in range(repetitions):
        bid = cands.branch_ids[i % cands.L]
        post = remove_branch(net, bid)
        t = time.perf_counter()
        solve_ac(post, SolverOptions(start=base))
        solve_times.append(time.perf_counter() - t)

    t = time.perf_counter()
    prep = prepare(net, jobs=jobs)
    build_time = time.perf_counter() - t

    placement = Placement(tuple(range(net.n_bus)))
    table = sample_noise(NoiseModel(seed=seed), net.n_bus, repetitions)
    ident_times = []
    for i in range(repetitions):
        bid = cands.branch_ids[i % cands.L]
        post = prep.ac.post_voltage(bid)
        post_sol = PowerFlowSolution(np.abs(post), np.angle(post), True, 0, 0.0)
        obs = synthesize_observation(prep.base, post_sol, table[i, :, 0], table[i, :, 1], placement)
        t = time.perf_counter()
        apply_filter(rank_candidates(prep.ac, obs), 0.0)
        ident_times.append(time.perf_counter() - t)
    return {
        "case": case, "n_bus": net.n_bus, "L": cands.L, "repetitions": repetitions, "jobs": jobs,
        "median_solve_s": statistics.median(solve_times),
        "median_identify_s": statistics.median(ident_times),
        "signature_build_s": build_time,
    }


def cmd_bench(args) -> int:
    report = benchmark(args.case, args.repetitions, args.jobs)
    print(f"case={report['case']} buses={report['n_bus']} candidates={report['L']} jobs={report['jobs']}")
    print(f"power flow solve (median of {report['repetitions']}): {report['median_solve_s'] * 1e3:.3f} ms")
    print(f"identification (median of {report['repetitions']}): {report['median_identify_s'] * 1e3:.3f} ms")
    print(f"signature bank build: {report['signature_build_s']:.3f} s")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _noise_flags(p, defaults=True):
    p.add_argument("--sigma-v", type=float, default=DEFAULT_SIGMA_V if defaults else None,
                   help="magnitude noise std (pu)")
    p.add_argument("--sigma-theta", type=float, default=DEFAULT_SIGMA_THETA_DEG if defaults else None,
                   help="angle noise std (degrees)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="outageid", description="PMU-based single line outage identification")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("identify", help="rank outage hypotheses for one observation")
    p.add_argument("--case", required=True)
    p.add_argument("--pmus", help="comma-separated bus numbers (default: all buses)")
    p.add_argument("--observation", help="CSV: bus_id,vm_pre,va_pre_deg,vm_post,va_post_deg")
    p.add_argument("--outage", type=int, help="synthesize an observation of this branch outage")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--mode", choices=["ac", "dc"], default="ac")
    p.add_argument("--metric", choices=["complex", "polar"], default="complex")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--include-transformers", type=_bool, default=True)
    _noise_flags(p, defaults=False)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("sweep", help="Monte Carlo placement/noise/threshold experiment")
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--case")
    p.add_argument("--mode", choices=["ac", "dc"])
    p.add_argument("--pmus", help="one fixed placement: comma-separated bus numbers")
    p.add_argument("--P", help="PMU counts to sample placements for, comma-separated")
    p.add_argument("--coverage", help="coverage fractions, e.g. 0.1,0.2,0.5,1.0")
    p.add_argument("--placements", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--epsilon", help="comma-separated epsilon values")
    p.add_argument("--epsilon-grid", help="lo:hi:step")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--include-transformers")
    p.add_argument("--metric", choices=["complex", "polar"])
    p.add_argument("--exact-pre", help="treat pre-outage measurements as noise-free")
    p.add_argument("--trials", help="also write per-trial CSVs")
    _noise_flags(p, defaults=False)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("demo4", help="two-hypothesis scatter on the 4-bus case")
    p.add_argument("--case", default="case4gs")
    p.add_argument("--realizations", type=int, default=1000)
    p.add_argument("--actual", type=int, default=1)
    p.add_argument("--rival", type=int, default=2)
    p.add_argument("--bus", type=int, default=2, help="monitored bus number")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _noise_flags(p)
    p.set_defaults(func=cmd_demo4)

    p = sub.add_parser("bench", help="time power flow and identification")
    p.add_argument("--case", default="case_ieee30")
    p.add_argument("--repetitions", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "identify":
        if args.sigma_v is None:
            args.sigma_v = 0.0
        if args.sigma_theta is None:
            args.sigma_theta = 0.0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"outageid: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"outageid: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (CaseError, ValidationError, ValueError, KeyError, RuntimeError) as exc:
        print(f"outageid: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
