"""Monte Carlo harness: random PMU placements, shared Gaussian noise, epsilon sweeps.

Every trial is one (placement, actual outage, noise realization) triple.
Noise is drawn once per realization for *all* buses, so different placements
and different outages under the same realization index see the same noise
at the buses they share.  Nothing random depends on execution order, which
keeps results identical for any number of worker processes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .identify import CATEGORIES, Category, Observation, Placement, category_codes
from .netmodel import Network, load_case
from .powerflow import PowerFlowSolution, SolverOptions, solve_ac
from .scenario import SignatureSet, build_dc_signatures, build_signatures, candidate_outages

log = logging.getLogger(__name__)

RESULT_SCHEMA = 1
RESULT_COLUMNS = [
    "coverage", "P", "epsilon", "n_trials",
    "rate_correct", "rate_misidentified", "rate_correct_filtered", "rate_misidentified_filtered",
]
TRIAL_COLUMNS = ["placement_idx", "actual_branch", "realization", "identified_branch", "E1", "E2", "delta_E"]

DEFAULT_SIGMA_V = 0.002 / math.sqrt(3)
DEFAULT_SIGMA_THETA_DEG = 0.01 / math.sqrt(3)


@dataclass(frozen=True)
class NoiseModel:
    sigma_v: float = DEFAULT_SIGMA_V
    sigma_theta: float = DEFAULT_SIGMA_THETA_DEG  # degrees
    seed: int = 0

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_theta < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "case_ieee30"
    mode: str = "ac"
    coverage: tuple[float, ...] = ()
    P: tuple[int, ...] = ()
    pmus: tuple[int, ...] = ()  # external bus numbers of one fixed placement
    placements: int = 1000
    realizations: int = 100
    epsilon_grid: tuple[float, ...] = (0.0,)
    noise: NoiseModel = field(default_factory=NoiseModel)
    include_transformers: bool = True
    seed: int = 0
    metric: str = "complex"
    independent_pre_noise: bool = True

    def __post_init__(self):
        if self.mode not in ("ac", "dc"):
            raise ValueError(f"mode must be 'ac' or 'dc', got {self.mode!r}")
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if self.placements < 1:
            raise ValueError("placements must be >= 1")
        if any(e < 0 for e in self.epsilon_grid):
            raise ValueError("epsilon values must be non-negative")
        if any(not 0 < c <= 1 for c in self.coverage):
            raise ValueError("coverage fractions must lie in (0, 1]")
        if sum(bool(x) for x in (self.coverage, self.P, self.pmus)) > 1:
            raise ValueError("give only one of coverage levels, P values or a fixed placement")
        for name in ("coverage", "P", "pmus", "epsilon_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    def digest(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def levels(self, n_bus: int) -> list[tuple[float, int]]:
        """``(coverage, P)`` pairs; defaults to full coverage."""
        if self.P:
            return [(p / n_bus, int(p)) for p in self.P]
        cov = self.coverage or (1.0,)
        return [(c, max(1, int(round(c * n_bus)))) for c in cov]


@dataclass(frozen=True)
class TrialRecord:
    actual: int
    placement_idx: int
    realization: int
    mode: str
    E1: float
    E2: float
    delta_E: float
    identified: int
    categories: dict[float, Category]


@dataclass
class TrialStore:
    """Columnar storage of per-trial outcomes for one (coverage, P) level."""

    coverage: float
    P: int
    placement_idx: np.ndarray
    actual: np.ndarray
    realization: np.ndarray
    identified: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    delta_E: np.ndarray

    def __len__(self):
        return len(self.actual)

    @classmethod
    def concat(cls, coverage: float, P: int, parts: Sequence[dict]) -> TrialStore:
        keys = ["placement_idx", "actual", "realization", "identified", "E1", "E2", "delta_E"]
        cols = {k: np.concatenate([p[k] for p in parts]) if parts else np.zeros(0) for k in keys}
        return cls(coverage, P, **cols)

    def codes(self, epsilon: float) -> np.ndarray:
        return category_codes(self.identified, self.actual, self.delta_E, epsilon)

    def rates(self, epsilon: float) -> np.ndarray:
        counts = np.bincount(self.codes(epsilon), minlength=4)
        return counts / max(len(self), 1)

    def records(self, epsilons: Sequence[float] = (0.0,), mode: str = "ac") -> Iterator[TrialRecord]:
        for i in range(len(self)):
            cats = {}
            for eps in epsilons:
                code = category_codes(self.identified[i], self.actual[i], self.delta_E[i], eps)
                cats[eps] = CATEGORIES[int(code)]
            yield TrialRecord(
                int(self.actual[i]), int(self.placement_idx[i]), int(self.realization[i]), mode,
                float(self.E1[i]), float(self.E2[i]), float(self.delta_E[i]), int(self.identified[i]), cats,
            )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRIAL_COLUMNS)
            for row in zip(self.placement_idx, self.actual, self.realization, self.identified,
                           self.E1, self.E2, self.delta_E):
                w.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3])] + [repr(float(v)) for v in row[4:]])


@dataclass
class ResultTable:
    rows: list[dict]
    trials: list[TrialStore] = field(default_factory=list, repr=False)
    metadata: dict = field(default_factory=dict)

    def cell(self, P: int, epsilon: float) -> dict:
        for r in self.rows:
            if r["P"] == P and r["epsilon"] == epsilon:
                return r
        raise KeyError((P, epsilon))

    def store(self, P: int) -> TrialStore:
        for t in self.trials:
            if t.P == P:
                return t
        raise KeyError(P)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema={RESULT_SCHEMA}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r["coverage"])), r["P"], repr(float(r["epsilon"])), r["n_trials"]]
                           + [repr(float(r[c])) for c in RESULT_COLUMNS[4:]])


def _row(coverage: float, P: int, epsilon: float, n: int, rates) -> dict:
    return {
        "coverage": coverage, "P": P, "epsilon": float(epsilon), "n_trials": int(n),
        "rate_correct": float(rates[0]), "rate_misidentified": float(rates[1]),
        "rate_correct_filtered": float(rates[2]), "rate_misidentified_filtered": float(rates[3]),
    }


# ---------------------------------------------------------------------------
# Sampling


def sample_placements(B: int, P: int, count: int, seed: int = 0) -> list[Placement]:
    """``count`` distinct random P-subsets of the B buses, or all of them if fewer exist."""
    if not 1 <= P <= B:
        raise ValueError(f"need 1 <= P <= B, got P={P}, B={B}")
    if math.comb(B, P) <= count:
        return [Placement(c) for c in itertools.combinations(range(B), P)]
    rng = np.random.default_rng([seed, B, P])
    seen: set[tuple[int, ...]] = set()
    out = []
    while len(out) < count:
        pick = tuple(sorted(int(i) for i in rng.choice(B, size=P, replace=False)))
        if pick in seen:
            continue
        seen.add(pick)
        out.append(Placement(pick))
    return out


def sample_noise(model: NoiseModel, B: int, R: int) -> np.ndarray:
    """Noise table of shape ``(R, B, 2, 2)``.

    Axis 2 is the epoch (pre, post); axis 3 is (magnitude in pu, angle in
    degrees).  Realization ``r`` is drawn from its own stream keyed by
    ``(seed, r)``, so growing R leaves earlier realizations unchanged.
    """
    out = np.empty((R, B, 2, 2))
    scale = np.array([model.sigma_v, model.sigma_theta])
    for r in range(R):
        rng = np.random.default_rng([model.seed, r])
        out[r] = rng.standard_normal((B, 2, 2)) * scale
    return out


def _noisy_phasor(Vm, Va, noise):
    return (Vm + noise[..., 0]) * np.exp(1j * (Va + np.radians(noise[..., 1])))


def synthesize_observation(
    base: PowerFlowSolution,
    post: PowerFlowSolution,
    noise_pre: np.ndarray,
    noise_post: np.ndarray,
    placement: Placement,
) -> Observation:
    """Noisy PMU phasors before and after the outage.

    ``noise_pre``/``noise_post`` are ``(B, 2)`` slices of a :func:`sample_noise`
    table (magnitude pu, angle degrees).
    """
    if not (base.converged and post.converged):
        raise ValueError("observations need converged pre- and post-outage states")
    s = np.asarray(placement.buses)
    v_pre = _noisy_phasor(base.Vm[s], base.Va[s], np.asarray(noise_pre)[s])
    v_post = _noisy_phasor(post.Vm[s], post.Va[s], np.asarray(noise_post)[s])
    return Observation(placement, v_pre, v_post)


# ---------------------------------------------------------------------------
# Trial evaluation


@dataclass(frozen=True)
class _Context:
    """Everything a worker needs; pickled once per chunk."""

    mode: str
    metric: str
    candidates: np.ndarray
    solved: np.ndarray
    rank_sigs: SignatureSet
    base_vm: np.ndarray
    base_va: np.ndarray
    true_ids: np.ndarray
    true_vm: np.ndarray
    true_va: np.ndarray
    noise: np.ndarray
    independent_pre_noise: bool


def _observed_features(ctx: _Context, s: np.ndarray, a: int) -> np.ndarray:
    noise = ctx.noise[:, s]
    pre_noise = noise[:, :, 0] if ctx.independent_pre_noise else np.zeros_like(noise[:, :, 0])
    v_pre = _noisy_phasor(ctx.base_vm[s], ctx.base_va[s], pre_noise)
    v_post = _noisy_phasor(ctx.true_vm[a, s], ctx.true_va[a, s], noise[:, :, 1])
    if ctx.mode == "dc":
        return np.angle(v_post / v_pre)
    if ctx.metric == "polar":
        return np.concatenate([np.abs(v_post) - np.abs(v_pre), np.angle(v_post / v_pre)], axis=1)
    d = v_post - v_pre
    return np.concatenate([d.real, d.imag], axis=1)


def _top_two(E: np.ndarray):
    """Index and value of the two smallest entries per row; ties go to the lower index."""
    n = E.shape[-1]
    rows = np.arange(E.shape[0])
    i1 = np.argmin(E, axis=1)
    e1 = E[rows, i1]
    if n == 1:
        return i1, e1, np.full_like(e1, np.inf)
    masked = E.copy()
    masked[rows, i1] = np.inf
    i2 = np.argmin(masked, axis=1)
    e2 = masked[rows, i2]
    return i1, e1, e2


def _gap(e1: np.ndarray, e2: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore"):
        gap = e2 - e1
    return np.where(np.isinf(e2) & np.isfinite(e1), np.inf, gap)


def _evaluate_placement(ctx: _Context, placement: Placement, p_idx: int) -> dict:
    s = np.asarray(placement.buses)
    F = ctx.rank_sigs.features(s, ctx.metric)
    R = ctx.noise.shape[0]
    L = F.shape[0]
    # bound the (R, L, k) difference tensor
    step = max(1, int(4_000_000 // max(1, L * F.shape[1])))
    parts = {k: [] for k in ("placement_idx", "actual", "realization", "identified", "E1", "E2", "delta_E")}
    for a, aid in enumerate(ctx.true_ids):
        obs = _observed_features(ctx, s, a)
        for r0 in range(0, R, step):
            o = obs[r0:r0 + step]
            diff = F[None, :, :] - o[:, None, :]
            E = np.sqrt(np.einsum("rlk,rlk->rl", diff, diff))
            E[:, ~ctx.solved] = np.inf
            i1, e1, e2 = _top_two(E)
            n = len(o)
            parts["placement_idx"].append(np.full(n, p_idx, dtype=np.int32))
            parts["actual"].append(np.full(n, aid, dtype=np.int32))
            parts["realization"].append(np.arange(r0, r0 + n, dtype=np.int32))
            parts["identified"].append(ctx.candidates[i1].astype(np.int32))
            parts["E1"].append(e1)
            parts["E2"].append(e2)
            parts["delta_E"].append(_gap(e1, e2))
    return {k: np.concatenate(v) for k, v in parts.items()}


def _evaluate_chunk(args) -> list[dict]:
    ctx, items = args
    return [_evaluate_placement(ctx, pl, idx) for idx, pl in items]


# ---------------------------------------------------------------------------
# Experiment


@dataclass
class Prepared:
    """Network, base case and signature banks shared by every trial of a run."""

    net: Network
    base: PowerFlowSolution
    ac: SignatureSet
    dc: SignatureSet | None
    timings: dict


def prepare(net: Network, include_transformers: bool = True, mode: str = "ac",
            opts: SolverOptions | None = None, jobs: int = 1) -> Prepared:
    timings = {}
    t = time.perf_counter()
    base = solve_ac(net, opts)
    timings["base_solve"] = time.perf_counter() - t
    if not base.converged:
        raise RuntimeError(f"base case did not converge (mismatch {base.max_mismatch:.3g})")
    cands = candidate_outages(net, include_transformers)
    t = time.perf_counter()
    ac = build_signatures(net, base, cands, opts, jobs=jobs)
    dc = build_dc_signatures(net, cands, jobs=jobs) if mode == "dc" else None
    timings["signatures"] = time.perf_counter() - t
    return Prepared(net, base, ac, dc, timings)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, prepared: Prepared | None = None,
                   keep_trials: bool = True) -> ResultTable:
    """Run every (placement, outage, realization) trial and tabulate categories per epsilon."""
    timings = {}
    if prepared is None:
        t = time.perf_counter()
        net = load_case(cfg.case)
        timings["parse"] = time.perf_counter() - t
        prepared = prepare(net, cfg.include_transformers, cfg.mode, jobs=jobs)
    net, base, ac = prepared.net, prepared.base, prepared.ac
    timings.update(prepared.timings)
    rank_sigs = prepared.dc if cfg.mode == "dc" else ac
    if rank_sigs is None:
        rank_sigs = build_dc_signatures(net, candidate_outages(net, cfg.include_transformers))

    unsolved = [b for b, ok in zip(ac.candidates, ac.solved) if not ok]
    if unsolved:
        log.warning("skipping trials for non-convergent outages: %s", unsolved)
    true_idx = np.flatnonzero(ac.solved)
    true_v = base.V[None, :] + ac.delta[true_idx]
    B = net.n_bus
    noise = sample_noise(cfg.noise, B, cfg.realizations)
    ctx = _Context(
        mode=cfg.mode, metric=cfg.metric,
        candidates=np.asarray(rank_sigs.candidates, dtype=np.int64), solved=rank_sigs.solved,
        rank_sigs=rank_sigs, base_vm=base.Vm, base_va=base.Va,
        true_ids=np.asarray(ac.candidates)[true_idx],
        true_vm=np.abs(true_v), true_va=np.angle(true_v),
        noise=noise, independent_pre_noise=cfg.independent_pre_noise,
    )

    t = time.perf_counter()
    rows, stores = [], []
    if cfg.pmus:
        fixed = Placement(tuple(sorted(net.bus_index(b) for b in cfg.pmus)))
        levels = [(fixed.P / B, fixed.P)]
    else:
        levels = cfg.levels(B)
    for coverage, P in levels:
        if cfg.pmus:
            placements = [fixed]
        else:
            placements = sample_placements(B, P, cfg.placements, seed=cfg.seed)
        items = list(enumerate(placements))
        if jobs > 1 and len(items) > 1:
            n_chunks = min(len(items), jobs * 4)
            bounds = np.linspace(0, len(items), n_chunks + 1).astype(int)
            chunks = [items[bounds[i]:bounds[i + 1]] for i in range(n_chunks)]
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = [d for part in pool.map(_evaluate_chunk, [(ctx, c) for c in chunks]) for d in part]
        else:
            results = _evaluate_chunk((ctx, items))
        store = TrialStore.concat(coverage, P, results)
        for eps in cfg.epsilon_grid:
            rows.append(_row(coverage, P, eps, len(store), store.rates(eps)))
        if keep_trials:
            stores.append(store)
    timings["trials"] = time.perf_counter() - t

    meta = {
        "config_digest": cfg.digest(), "seed": cfg.seed, "noise_seed": cfg.noise.seed,
        "n_bus": B, "L": ac.L, "timings": timings,
    }
    return ResultTable(rows, stores, meta)


def sweep_threshold(cfg: ExperimentConfig, results: ResultTable, epsilons=None) -> ResultTable:
    """Re-tabulate stored trials on a new epsilon grid; no re-simulation."""
    eps_grid = cfg.epsilon_grid if epsilons is None else tuple(float(e) for e in epsilons)
    if not results.trials:
        raise ValueError("results carry no trial store; rerun with keep_trials=True")
    rows = [
        _row(st.coverage, st.P, eps, len(st), st.rates(eps))
        for st in results.trials for eps in eps_grid
    ]
    return ResultTable(rows, results.trials, dict(results.metadata))


def threshold_curve(store: TrialStore) -> tuple[np.ndarray, np.ndarray]:
    """Exact step-function form of the category rates versus epsilon.

    Returns ``(breakpoints, rates)`` where ``rates[i]`` holds the four
    category rates for epsilon in ``(breakpoints[i-1], breakpoints[i]]``;
    ``rates[0]`` applies at and below ``breakpoints[0]`` and the final row
    applies above the last breakpoint.
    """
    finite = np.unique(store.delta_E[np.isfinite(store.delta_E)])
    rates = np.array([store.rates(0.0)] + [store.rates(np.nextafter(b, np.inf)) for b in finite])
    return finite, rates


def calibrate_epsilon(store: TrialStore, target_misidentified: float, grid) -> float | None:
    """Smallest epsilon on ``grid`` whose misidentification rate is at or below the target."""
    for eps in sorted(float(e) for e in grid):
        if store.rates(eps)[1] <= target_misidentified:
            return eps
    return None


# ---------------------------------------------------------------------------
# Two-hypothesis scatter (the 4-bus illustration)


@dataclass
class ScatterDemo:
    observed: np.ndarray  # complex (R,), observed change at the monitored bus
    expected_actual: complex
    expected_rival: complex
    nearest: np.ndarray  # identified branch per realization
    closer_to_rival: np.ndarray  # bool per realization

    @property
    def misidentified_fraction(self) -> float:
        return float(np.mean(self.closer_to_rival))


def scatter_demo(net: Network, realizations: int = 1000, noise: NoiseModel | None = None,
                 actual: int = 1, rival: int = 2, monitored_bus: int = 1) -> ScatterDemo:
    """Simulated observations at one bus after the outage of ``actual``.

    PMUs sit on the monitored bus and the reference bus; the reference bus is
    noise-free here, so only the monitored bus decides the ranking.
    """
    noise = noise or NoiseModel()
    prep = prepare(net)
    sigs, base = prep.ac, prep.base
    table = sample_noise(noise, net.n_bus, realizations)
    table[:, net.slack_bus] = 0.0
    pmus = np.array(sorted({net.slack_bus, monitored_bus}))
    post = sigs.post_voltage(actual)
    post_sol = PowerFlowSolution(np.abs(post), np.angle(post), True, 0, 0.0)
    k = int(np.flatnonzero(pmus == monitored_bus)[0])
    F = sigs.features(pmus)
    observed = np.empty(realizations, dtype=complex)
    nearest = np.empty(realizations, dtype=int)
    for r in range(realizations):
        obs = synthesize_observation(base, post_sol, table[r, :, 0], table[r, :, 1], Placement(tuple(pmus)))
        observed[r] = obs.delta[k]
        E = np.linalg.norm(F - obs.features(), axis=1)
        E[~sigs.solved] = np.inf
        nearest[r] = sigs.candidates[int(np.argmin(E))]
    d_act = sigs.signature(actual)[monitored_bus]
    d_riv = sigs.signature(rival)[monitored_bus]
    closer = np.abs(observed - d_riv) < np.abs(observed - d_act)
    return ScatterDemo(observed, complex(d_act), complex(d_riv), nearest, closer)
