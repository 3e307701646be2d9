"""Candidate outage enumeration and the expected-signature bank.

A signature is the full-network voltage change that the model predicts for
the outage of one branch.  Signatures are computed once, for every bus, and
restricted to a PMU placement only when they are compared to observations.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .netmodel import Network, remove_branch
from .powerflow import PowerFlowSolution, SolverError, SolverOptions, solve_ac, solve_dc

log = logging.getLogger(__name__)

SIGNATURE_SCHEMA = 1


@dataclass(frozen=True)
class CandidateSet:
    branch_ids: tuple[int, ...]

    def __post_init__(self):
        ids = tuple(int(i) for i in self.branch_ids)
        if list(ids) != sorted(set(ids)):
            raise ValueError("candidate ids must be unique and ascending")
        object.__setattr__(self, "branch_ids", ids)

    @property
    def L(self) -> int:
        return len(self.branch_ids)

    def __len__(self):
        return len(self.branch_ids)

    def __iter__(self):
        return iter(self.branch_ids)

    def __contains__(self, branch_id):
        return branch_id in self.branch_ids


def is_islanding(net: Network, branch_id: int) -> bool:
    """True when switching out ``branch_id`` disconnects the in-service graph."""
    return not remove_branch(net, branch_id).is_connected()


def bridges(net: Network) -> set[int]:
    """Ids of in-service branches that are graph bridges (iterative Tarjan).

    Parallel branches are distinct edges, so neither of a parallel pair is a bridge.
    """
    adj: list[list[tuple[int, int]]] = [[] for _ in range(net.n_bus)]
    for br in net.in_service_branches():
        adj[br.from_bus].append((br.to_bus, br.id))
        adj[br.to_bus].append((br.from_bus, br.id))

    disc = [-1] * net.n_bus
    low = [0] * net.n_bus
    found: set[int] = set()
    timer = 0
    for root in range(net.n_bus):
        if disc[root] >= 0:
            continue
        disc[root] = low[root] = timer
        timer += 1
        # (node, edge id used to enter it, neighbour iterator position)
        stack = [(root, -1, 0)]
        while stack:
            u, via, pos = stack[-1]
            if pos < len(adj[u]):
                stack[-1] = (u, via, pos + 1)
                v, eid = adj[u][pos]
                if eid == via:
                    continue
                if disc[v] < 0:
                    disc[v] = low[v] = timer
                    timer += 1
                    stack.append((v, eid, 0))
                else:
                    low[u] = min(low[u], disc[v])
            else:
                stack.pop()
                if stack:
                    parent = stack[-1][0]
                    low[parent] = min(low[parent], low[u])
                    if low[u] > disc[parent]:
                        found.add(via)
    return found


def candidate_outages(net: Network, include_transformers: bool = True, method: str = "bridges") -> CandidateSet:
    """In-service branches whose removal keeps the network connected.

    ``method="traversal"`` re-runs a connectivity search per branch; the
    default bridge search gives the same set in linear time.
    """
    if method == "bridges":
        islanding = bridges(net)
        ids = [br.id for br in net.in_service_branches() if br.id not in islanding]
    elif method == "traversal":
        ids = [br.id for br in net.in_service_branches() if not is_islanding(net, br.id)]
    else:
        raise ValueError(f"unknown method {method!r}")
    if not include_transformers:
        ids = [i for i in ids if not net.is_transformer(i)]
    return CandidateSet(tuple(ids))


@dataclass(frozen=True)
class SignatureSet:
    """Expected voltage changes for every candidate outage.

    ``delta[i]`` belongs to ``candidates[i]``.  In ``ac`` mode it is the complex
    phasor change ``V_post - V_pre`` per bus; in ``dc`` mode it is the real
    angle change (rad) from the DC model.  Rows of unsolved candidates are NaN.
    """

    mode: str
    candidates: tuple[int, ...]
    delta: np.ndarray
    solved: np.ndarray
    base: PowerFlowSolution | None = None
    built_at: float = field(default_factory=time.time, compare=False)

    @property
    def L(self) -> int:
        return len(self.candidates)

    @property
    def n_bus(self) -> int:
        return self.delta.shape[1]

    def index(self, branch_id: int) -> int:
        try:
            return self.candidates.index(branch_id)
        except ValueError:
            raise KeyError(f"branch {branch_id} is not a candidate") from None

    def signature(self, branch_id: int) -> np.ndarray | None:
        i = self.index(branch_id)
        return self.delta[i] if self.solved[i] else None

    def post_voltage(self, branch_id: int) -> np.ndarray:
        """Expected post-outage complex voltages (ac mode only)."""
        if self.mode != "ac" or self.base is None:
            raise ValueError("post-outage voltages need an ac signature set with its base case")
        return self.base.V + self.delta[self.index(branch_id)]

    def features(self, buses, metric: str = "complex") -> np.ndarray:
        """Real feature matrix ``(L, k)`` whose Euclidean row distances define E.

        ``complex`` stacks real and imaginary parts of the restricted phasor
        change, so the distance equals the complex 2-norm.  ``polar`` stacks
        magnitude change (pu) and angle change (rad) instead.
        """
        buses = np.asarray(buses, dtype=int)
        d = self.delta[:, buses]
        if self.mode == "dc":
            return d.real
        if metric == "complex":
            return np.concatenate([d.real, d.imag], axis=1)
        if metric == "polar":
            if self.base is None:
                raise ValueError("polar metric needs the base case")
            v0 = self.base.V[buses]
            v1 = v0 + d
            return np.concatenate([np.abs(v1) - np.abs(v0), np.angle(v1 / v0)], axis=1)
        raise ValueError(f"unknown metric {metric!r}")

    def to_csv(self, path_or_buf, external_ids=None) -> None:
        ext = list(external_ids) if external_ids is not None else list(range(self.n_bus))
        own = isinstance(path_or_buf, (str, Path))
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            fh.write(f"# schema={SIGNATURE_SCHEMA} mode={self.mode}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["branch_id", "bus_id", "d_re", "d_im"])
            for bid, row, ok in zip(self.candidates, self.delta, self.solved):
                if not ok:
                    w.writerow([bid, "", "nan", "nan"])
                    continue
                for k, d in enumerate(row):
                    w.writerow([bid, ext[k], repr(float(d.real)), repr(float(d.imag))])
        finally:
            if own:
                fh.close()

    @classmethod
    def from_csv(cls, path_or_buf, external_ids=None, base: PowerFlowSolution | None = None) -> SignatureSet:
        text = Path(path_or_buf).read_text() if isinstance(path_or_buf, (str, Path)) else path_or_buf.read()
        lines = text.splitlines()
        mode = "ac"
        if lines and lines[0].startswith("#"):
            meta = dict(kv.split("=", 1) for kv in lines[0][1:].split())
            if int(meta.get("schema", SIGNATURE_SCHEMA)) != SIGNATURE_SCHEMA:
                raise ValueError(f"unsupported signature schema {meta['schema']}")
            mode = meta.get("mode", "ac")
            lines = lines[1:]
        rows = list(csv.DictReader(io.StringIO("\n".join(lines))))
        pos = {e: i for i, e in enumerate(external_ids)} if external_ids is not None else None
        cands: list[int] = []
        entries: dict[int, list[tuple[int, complex]]] = {}
        for r in rows:
            bid = int(r["branch_id"])
            if bid not in entries:
                cands.append(bid)
                entries[bid] = []
            if r["bus_id"] == "":
                continue
            k = int(r["bus_id"])
            k = pos[k] if pos is not None else k
            entries[bid].append((k, complex(float(r["d_re"]), float(r["d_im"]))))
        n = max((k for e in entries.values() for k, _ in e), default=-1) + 1
        if external_ids is not None:
            n = len(external_ids)
        cands.sort()
        delta = np.full((len(cands), n), np.nan, dtype=complex if mode == "ac" else float)
        solved = np.zeros(len(cands), dtype=bool)
        for i, bid in enumerate(cands):
            if entries[bid]:
                solved[i] = True
                for k, d in entries[bid]:
                    delta[i, k] = d if mode == "ac" else d.real
        return cls(mode=mode, candidates=tuple(cands), delta=delta, solved=solved, base=base)


def _solve_outage(net: Network, branch_id: int, opts: SolverOptions, base: PowerFlowSolution):
    post_net = remove_branch(net, branch_id)
    warm = SolverOptions(opts.tolerance, opts.max_iterations, start=base)
    for attempt in (warm, SolverOptions(opts.tolerance, opts.max_iterations)):
        try:
            sol = solve_ac(post_net, attempt)
        except SolverError:
            continue
        if sol.converged:
            return sol
    return None


def _ac_chunk(args):
    net, ids, opts, base = args
    out = []
    for bid in ids:
        sol = _solve_outage(net, bid, opts, base)
        out.append(None if sol is None else sol.V - base.V)
    return out


def _dc_chunk(args):
    net, ids, theta0 = args
    out = []
    for bid in ids:
        try:
            out.append(solve_dc(remove_branch(net, bid)) - theta0)
        except SolverError:
            out.append(None)
    return out


def _run_chunks(fn, payloads, jobs):
    if jobs <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, payloads))


def _split(ids, jobs):
    n = max(1, min(len(ids), jobs * 4))
    return [list(c) for c in np.array_split(np.asarray(ids, dtype=int), n) if len(c)]


def build_signatures(
    net: Network,
    base: PowerFlowSolution,
    cands: CandidateSet,
    opts: SolverOptions | None = None,
    jobs: int = 1,
) -> SignatureSet:
    """AC signatures: warm-started Newton solve per candidate, flat-start fallback."""
    if not base.converged:
        raise ValueError("base case must be converged")
    opts = opts or SolverOptions()
    ids = list(cands)
    chunks = _split(ids, jobs) if ids else []
    results = _run_chunks(_ac_chunk, [(net, c, opts, base) for c in chunks], jobs)
    flat = [d for r in results for d in r]
    delta = np.full((len(ids), net.n_bus), np.nan, dtype=complex)
    solved = np.zeros(len(ids), dtype=bool)
    for i, d in enumerate(flat):
        if d is None:
            log.warning("outage of branch %d did not converge; excluded from ranking", ids[i])
        else:
            delta[i] = d
            solved[i] = True
    return SignatureSet(mode="ac", candidates=tuple(ids), delta=delta, solved=solved, base=base)


def build_dc_signatures(net: Network, cands: CandidateSet, jobs: int = 1) -> SignatureSet:
    """Angle-only signatures from the DC model, pre and post."""
    theta0 = solve_dc(net)
    ids = list(cands)
    chunks = _split(ids, jobs) if ids else []
    results = _run_chunks(_dc_chunk, [(net, c, theta0) for c in chunks], jobs)
    flat = [d for r in results for d in r]
    delta = np.full((len(ids), net.n_bus), np.nan)
    solved = np.zeros(len(ids), dtype=bool)
    for i, d in enumerate(flat):
        if d is not None:
            delta[i] = d
            solved[i] = True
    base = PowerFlowSolution(np.ones(net.n_bus), theta0, True, 0, 0.0)
    return SignatureSet(mode="dc", candidates=tuple(ids), delta=delta, solved=solved, base=base)
