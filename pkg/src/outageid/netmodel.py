"""Grid case model: MATPOWER-style parsing, validation and bus admittance.

Buses are renumbered to dense 0-based indices on load; the external numbers
from the case file are kept in ``Network.external_ids``.  Branch ids are the
1-based row numbers of the ``branch`` matrix, matching the usual MATPOWER
convention of referring to "line 1", "line 2", and so on.

All quantities are per-unit on ``base_mva`` and all angles are radians.
Degrees only appear when reading or writing case text.
"""

from __future__ import annotations

import dataclasses
import enum
import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


class CaseError(ValueError):
    """Raised when case text cannot be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """Raised when parsed data violates the network invariants."""


class BusKind(enum.IntEnum):
    PQ = 1
    PV = 2
    SLACK = 3


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    Pd: float
    Qd: float
    Gs: float
    Bs: float
    Vm_init: float
    Va_init: float
    base_kv: float


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float
    tap: float = 1.0
    phase_shift: float = 0.0
    in_service: bool = True


@dataclass(frozen=True)
class Generator:
    bus: int
    Pg: float
    Qg: float
    Vset: float
    in_service: bool = True


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    slack_bus: int
    external_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.external_ids:
            object.__setattr__(self, "external_ids", tuple(range(1, len(self.buses) + 1)))
        validate(self, check_connected=False)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    def bus_index(self, external_id: int) -> int:
        try:
            return self.external_ids.index(int(external_id))
        except ValueError:
            raise KeyError(f"no bus numbered {external_id}") from None

    def branch(self, branch_id: int) -> Branch:
        if not 1 <= branch_id <= len(self.branches):
            raise KeyError(f"unknown branch id {branch_id}")
        return self.branches[branch_id - 1]

    def is_transformer(self, branch_id: int) -> bool:
        """Off-nominal tap, phase shift, or differing end voltage bases."""
        br = self.branch(branch_id)
        return (
            br.tap != 1.0
            or br.phase_shift != 0.0
            or self.buses[br.from_bus].base_kv != self.buses[br.to_bus].base_kv
        )

    def in_service_branches(self) -> list[Branch]:
        return [br for br in self.branches if br.in_service]

    def is_connected(self) -> bool:
        return _count_components(self.n_bus, self.in_service_branches()) == 1

    def bus_types(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return index arrays ``(ref, pv, pq)``.

        A PV bus without an in-service generator is treated as PQ.
        """
        has_gen = np.zeros(self.n_bus, dtype=bool)
        for g in self.generators:
            if g.in_service:
                has_gen[g.bus] = True
        kinds = np.array([b.kind for b in self.buses])
        ref = np.flatnonzero(kinds == BusKind.SLACK)
        pv = np.flatnonzero((kinds == BusKind.PV) & has_gen)
        pq = np.flatnonzero((kinds == BusKind.PQ) | ((kinds == BusKind.PV) & ~has_gen))
        return ref, pv, pq

    def voltage_setpoints(self) -> np.ndarray:
        """Initial magnitudes with generator set points applied at PV/slack buses."""
        vm = np.array([b.Vm_init for b in self.buses], dtype=float)
        ref, pv, _ = self.bus_types()
        regulated = set(ref.tolist()) | set(pv.tolist())
        for g in self.generators:
            if g.in_service and g.bus in regulated:
                vm[g.bus] = g.Vset
        return vm

    def injections(self) -> np.ndarray:
        """Scheduled complex power injection per bus (generation minus load), pu."""
        s = -np.array([complex(b.Pd, b.Qd) for b in self.buses])
        for g in self.generators:
            if g.in_service:
                s[g.bus] += complex(g.Pg, g.Qg)
        return s


def _count_components(n_bus: int, branches) -> int:
    if n_bus == 0:
        return 0
    f = np.array([br.from_bus for br in branches], dtype=int)
    t = np.array([br.to_bus for br in branches], dtype=int)
    graph = sp.coo_matrix((np.ones(len(f)), (f, t)), shape=(n_bus, n_bus))
    n, _ = connected_components(graph, directed=False)
    return n


def validate(net: Network, check_connected: bool = True) -> None:
    if not net.base_mva > 0:
        raise ValidationError(f"base_mva must be positive, got {net.base_mva}")
    n = len(net.buses)
    if len(net.external_ids) != n or len(set(net.external_ids)) != n:
        raise ValidationError("external bus ids must be unique, one per bus")
    for i, b in enumerate(net.buses):
        if b.id != i:
            raise ValidationError(f"bus at position {i} has id {b.id}")
        if not b.Vm_init > 0:
            raise ValidationError(f"bus {net.external_ids[i]}: Vm_init must be positive")
    slack = [b.id for b in net.buses if b.kind == BusKind.SLACK]
    if len(slack) != 1:
        raise ValidationError(f"expected exactly one slack bus, found {len(slack)}")
    if slack[0] != net.slack_bus:
        raise ValidationError("slack_bus does not match the bus marked as slack")
    for k, br in enumerate(net.branches, start=1):
        if br.id != k:
            raise ValidationError(f"branch at row {k} has id {br.id}")
        for end in (br.from_bus, br.to_bus):
            if not 0 <= end < n:
                raise ValidationError(f"branch {k} references unknown bus index {end}")
        if br.from_bus == br.to_bus:
            raise ValidationError(f"branch {k} is a self loop")
        if br.r == 0 and br.x == 0:
            raise ValidationError(f"branch {k} has zero impedance")
        if not br.tap > 0:
            raise ValidationError(f"branch {k} has non-positive tap {br.tap}")
    for g in net.generators:
        if not 0 <= g.bus < n:
            raise ValidationError(f"generator references unknown bus index {g.bus}")
        if g.in_service and not g.Vset > 0:
            raise ValidationError(f"generator at bus {net.external_ids[g.bus]}: Vset must be positive")
    if check_connected and n and not net.is_connected():
        raise ValidationError("in-service branches do not form a connected network")


# ---------------------------------------------------------------------------
# MATPOWER text format

_MATRIX_START = re.compile(r"^\s*mpc\.(\w+)\s*=\s*\[(.*)$")
_SCALAR = re.compile(r"^\s*mpc\.(\w+)\s*=\s*([^;\[]+?)\s*;?\s*$")

_MIN_COLS = {"bus": 13, "gen": 8, "branch": 11}


def _read_matrices(text: str) -> tuple[dict[str, float], dict[str, list[tuple[int, list[float]]]]]:
    scalars: dict[str, float] = {}
    matrices: dict[str, list[tuple[int, list[float]]]] = {}
    current: str | None = None
    rows: list[tuple[int, list[float]]] = []

    def add_chunk(chunk: str, lineno: int):
        for piece in chunk.split(";"):
            tokens = piece.replace(",", " ").split()
            if not tokens:
                continue
            try:
                values = [float(tok) for tok in tokens]
            except ValueError:
                raise CaseError(f"malformed row in mpc.{current}: {piece.strip()!r}", lineno) from None
            rows.append((lineno, values))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%", 1)[0].rstrip()
        if current is None:
            if not line.strip():
                continue
            m = _MATRIX_START.match(line)
            if m:
                current, rest = m.group(1), m.group(2)
                rows = []
                if "]" in rest:
                    add_chunk(rest.split("]", 1)[0], lineno)
                    matrices[current] = rows
                    current = None
                else:
                    add_chunk(rest, lineno)
                continue
            m = _SCALAR.match(line)
            if m:
                try:
                    scalars[m.group(1)] = float(m.group(2))
                except ValueError:
                    pass  # version strings and the like
            continue
        if "]" in line:
            add_chunk(line.split("]", 1)[0], lineno)
            matrices[current] = rows
            current = None
        else:
            add_chunk(line, lineno)
    if current is not None:
        raise CaseError(f"unterminated matrix mpc.{current}")
    return scalars, matrices


def parse_case(text: str) -> Network:
    """Parse MATPOWER case text into a validated :class:`Network`."""
    scalars, matrices = _read_matrices(text)
    if "baseMVA" not in scalars:
        raise CaseError("missing mpc.baseMVA")
    base = scalars["baseMVA"]
    for name in ("bus", "gen", "branch"):
        if name not in matrices:
            raise CaseError(f"missing mpc.{name} matrix")
        for lineno, row in matrices[name]:
            if len(row) < _MIN_COLS[name]:
                raise CaseError(
                    f"mpc.{name} row has {len(row)} columns, need at least {_MIN_COLS[name]}", lineno
                )

    ext_ids: list[int] = []
    index: dict[int, int] = {}
    buses = []
    slack = -1
    for lineno, row in matrices["bus"]:
        ext = int(row[0])
        if ext != row[0] or ext in index:
            raise ValidationError(f"line {lineno}: bad or duplicate bus number {row[0]}")
        try:
            kind = BusKind(int(row[1]))
        except ValueError:
            raise ValidationError(f"line {lineno}: unsupported bus type {row[1]}") from None
        i = len(buses)
        index[ext] = i
        ext_ids.append(ext)
        if kind == BusKind.SLACK:
            slack = i
        buses.append(Bus(
            id=i, kind=kind,
            Pd=row[2] / base, Qd=row[3] / base, Gs=row[4] / base, Bs=row[5] / base,
            Vm_init=row[7], Va_init=math.radians(row[8]), base_kv=row[9],
        ))

    def lookup(ext: float, lineno: int, what: str) -> int:
        try:
            return index[int(ext)]
        except KeyError:
            raise ValidationError(f"line {lineno}: {what} references unknown bus {ext:g}") from None

    gens = []
    for lineno, row in matrices["gen"]:
        gens.append(Generator(
            bus=lookup(row[0], lineno, "generator"),
            Pg=row[1] / base, Qg=row[2] / base, Vset=row[5], in_service=row[7] > 0,
        ))

    branches = []
    for k, (lineno, row) in enumerate(matrices["branch"], start=1):
        f = lookup(row[0], lineno, f"branch {k}")
        t = lookup(row[1], lineno, f"branch {k}")
        if row[2] == 0 and row[3] == 0:
            raise ValidationError(f"line {lineno}: branch {k} has zero impedance")
        branches.append(Branch(
            id=k, from_bus=f, to_bus=t, r=row[2], x=row[3], b_charging=row[4],
            tap=row[8] if row[8] != 0 else 1.0, phase_shift=math.radians(row[9]),
            in_service=row[10] > 0,
        ))

    net = Network(
        base_mva=base, buses=tuple(buses), branches=tuple(branches),
        generators=tuple(gens), slack_bus=slack, external_ids=tuple(ext_ids),
    )
    validate(net)
    return net


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def serialize_case(net: Network, name: str = "case") -> str:
    """Write ``net`` back out as MATPOWER case text."""
    base = net.base_mva
    out = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(base)};", "", "mpc.bus = ["]
    for b, ext in zip(net.buses, net.external_ids):
        vals = [ext, int(b.kind), b.Pd * base, b.Qd * base, b.Gs * base, b.Bs * base, 1,
                b.Vm_init, math.degrees(b.Va_init), b.base_kv, 1, 1.1, 0.9]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in net.generators:
        vals = [net.external_ids[g.bus], g.Pg * base, g.Qg * base, 0, 0, g.Vset, base,
                1 if g.in_service else 0, 0, 0]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in net.branches:
        ratio = 0 if br.tap == 1.0 else br.tap
        vals = [net.external_ids[br.from_bus], net.external_ids[br.to_bus], br.r, br.x,
                br.b_charging, 0, 0, 0, ratio, math.degrees(br.phase_shift),
                1 if br.in_service else 0, -360, 360]
        out.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    out += ["];", ""]
    return "\n".join(out)


def load_case(path_or_name: str | Path) -> Network:
    """Load a case from a file path or by bundled name (``case_ieee30``, ``case30``, ``case4gs``)."""
    p = Path(path_or_name)
    if p.suffix != ".m" and not p.exists():
        p = Path(str(path_or_name) + ".m")
    if not p.exists():
        bundled = resources.files("outageid") / "cases" / p.name
        if not bundled.is_file():
            raise FileNotFoundError(f"case not found: {path_or_name}")
        return parse_case(bundled.read_text())
    return parse_case(p.read_text())


def bundled_cases() -> list[str]:
    return sorted(
        f.name[:-2] for f in (resources.files("outageid") / "cases").iterdir() if f.name.endswith(".m")
    )


# ---------------------------------------------------------------------------
# Admittance


def branch_stamps(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-branch two-port admittances ``(Yff, Yft, Ytf, Ytt)``; zero for out-of-service rows."""
    status = np.array([br.in_service for br in net.branches], dtype=float)
    z = np.array([complex(br.r, br.x) for br in net.branches])
    ys = np.divide(status, z, out=np.zeros_like(z), where=status > 0)
    bc = status * np.array([br.b_charging for br in net.branches])
    tap = np.array([br.tap * np.exp(1j * br.phase_shift) for br in net.branches])
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    return yff, yft, ytf, ytt


def admittance_matrix(net: Network) -> sp.csr_matrix:
    """Bus admittance matrix (sparse, complex, ``B x B``).

    Includes off-nominal taps, phase shifters, line charging and bus shunts.
    Out-of-service branches do not contribute.
    """
    n = net.n_bus
    ysh = np.array([complex(b.Gs, b.Bs) for b in net.buses]) if n else np.zeros(0, complex)
    if not net.branches:
        return sp.csr_matrix(sp.diags(ysh, shape=(n, n), dtype=complex))
    yff, yft, ytf, ytt = branch_stamps(net)
    f = np.array([br.from_bus for br in net.branches])
    t = np.array([br.to_bus for br in net.branches])
    rows = np.concatenate([f, f, t, t, np.arange(n)])
    cols = np.concatenate([f, t, f, t, np.arange(n)])
    data = np.concatenate([yff, yft, ytf, ytt, ysh])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def remove_branch(net: Network, branch_id: int) -> Network:
    """Return a copy of ``net`` with branch ``branch_id`` switched out."""
    br = net.branch(branch_id)
    if not br.in_service:
        raise ValueError(f"branch {branch_id} is already out of service")
    branches = list(net.branches)
    branches[branch_id - 1] = dataclasses.replace(br, in_service=False)
    return dataclasses.replace(net, branches=tuple(branches))


def restore_branch(net: Network, branch_id: int) -> Network:
    br = net.branch(branch_id)
    if br.in_service:
        raise ValueError(f"branch {branch_id} is already in service")
    branches = list(net.branches)
    branches[branch_id - 1] = dataclasses.replace(br, in_service=True)
    return dataclasses.replace(net, branches=tuple(branches))
