"""AC (Newton-Raphson, polar form) and DC power flow."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .netmodel import Network, admittance_matrix, branch_stamps


class SolverError(RuntimeError):
    """Raised for structurally unsolvable systems (singular Jacobian or B matrix)."""


@dataclass(frozen=True)
class PowerFlowSolution:
    Vm: np.ndarray
    Va: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float

    @property
    def V(self) -> np.ndarray:
        return self.Vm * np.exp(1j * self.Va)


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-8
    max_iterations: int = 20
    # None means flat start.
    start: PowerFlowSolution | None = field(default=None, repr=False)

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


def _mismatch_vector(Ybus, V, Sbus, pv, pq):
    mis = V * np.conj(Ybus @ V) - Sbus
    pvpq = np.r_[pv, pq]
    return np.r_[mis[pvpq].real, mis[pq].imag]


def mismatch(net: Network, Vm, Va) -> np.ndarray:
    """Power mismatch ``[dP(pv, pq), dQ(pq)]`` in pu (calculated minus scheduled)."""
    Vm = np.asarray(Vm, dtype=float)
    Va = np.asarray(Va, dtype=float)
    if Vm.shape != (net.n_bus,) or Va.shape != (net.n_bus,):
        raise ValueError("Vm and Va must have one entry per bus")
    _, pv, pq = net.bus_types()
    return _mismatch_vector(admittance_matrix(net), Vm * np.exp(1j * Va), net.injections(), pv, pq)


def _dS_dV(Ybus, V):
    """Partial derivatives of bus injections w.r.t. voltage angle and magnitude."""
    n = len(V)
    Ibus = Ybus @ V
    diagV = sp.diags(V, shape=(n, n))
    diagIbus = sp.diags(Ibus, shape=(n, n))
    diagVnorm = sp.diags(V / np.abs(V), shape=(n, n))
    dS_dVm = diagV @ np.conj(Ybus @ diagVnorm) + np.conj(diagIbus) @ diagVnorm
    dS_dVa = 1j * diagV @ np.conj(diagIbus - Ybus @ diagV)
    return dS_dVa, dS_dVm


def jacobian(net: Network, Vm, Va) -> sp.csc_matrix:
    """Analytic Newton Jacobian of :func:`mismatch` w.r.t. ``[Va(pv, pq), Vm(pq)]``."""
    _, pv, pq = net.bus_types()
    V = np.asarray(Vm) * np.exp(1j * np.asarray(Va))
    return _assemble_jacobian(admittance_matrix(net), V, pv, pq)


def _assemble_jacobian(Ybus, V, pv, pq):
    dS_dVa, dS_dVm = _dS_dV(Ybus, V)
    pvpq = np.r_[pv, pq]
    dS_dVa = dS_dVa.tocsr()
    dS_dVm = dS_dVm.tocsr()
    j11 = dS_dVa[pvpq][:, pvpq].real
    j12 = dS_dVm[pvpq][:, pq].real
    j21 = dS_dVa[pq][:, pvpq].imag
    j22 = dS_dVm[pq][:, pq].imag
    return sp.bmat([[j11, j12], [j21, j22]], format="csc")


def solve_ac(net: Network, opts: SolverOptions | None = None) -> PowerFlowSolution:
    """Newton-Raphson AC power flow.

    Generator reactive limits are not enforced.  Non-convergence is reported
    through ``converged=False``; a singular Jacobian raises :class:`SolverError`.
    """
    opts = opts or SolverOptions()
    ref, pv, pq = net.bus_types()
    Ybus = admittance_matrix(net).tocsr()
    Sbus = net.injections()

    vset = net.voltage_setpoints()
    if opts.start is None:
        Vm = np.where(np.isin(np.arange(net.n_bus), np.r_[ref, pv]), vset, 1.0)
        Va = np.full(net.n_bus, net.buses[net.slack_bus].Va_init)
    else:
        Vm = np.array(opts.start.Vm, dtype=float)
        Va = np.array(opts.start.Va, dtype=float)
        Vm[np.r_[ref, pv]] = vset[np.r_[ref, pv]]
        Va[ref] = net.buses[net.slack_bus].Va_init
    V = Vm * np.exp(1j * Va)

    npv, npq = len(pv), len(pq)
    F = _mismatch_vector(Ybus, V, Sbus, pv, pq)
    normF = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while normF > opts.tolerance and it < opts.max_iterations:
        it += 1
        J = _assemble_jacobian(Ybus, V, pv, pq)
        try:
            dx = -splu(J).solve(F)
        except RuntimeError as exc:
            raise SolverError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)):
            # Treat a diverging iterate as non-convergence rather than a crash.
            break
        Va[pv] += dx[:npv]
        Va[pq] += dx[npv:npv + npq]
        Vm[pq] += dx[npv + npq:]
        V = Vm * np.exp(1j * Va)
        Vm = np.abs(V)
        Va = np.angle(V)
        F = _mismatch_vector(Ybus, V, Sbus, pv, pq)
        normF = np.max(np.abs(F)) if F.size else 0.0
        if not np.isfinite(normF):
            break

    converged = bool(np.isfinite(normF) and normF <= opts.tolerance and np.all(Vm > 0))
    return PowerFlowSolution(Vm=Vm, Va=Va, converged=converged, iterations=it, max_mismatch=float(normF))


def susceptance_matrices(net: Network) -> tuple[sp.csr_matrix, np.ndarray]:
    """DC model ``(Bbus, Pbusinj)``: lossless, unit magnitudes, 1/x branch susceptance.

    ``Pbusinj`` is the injection equivalent of phase-shifter angles.
    """
    n = net.n_bus
    status = np.array([br.in_service for br in net.branches], dtype=float)
    x = np.array([br.x for br in net.branches])
    tap = np.array([br.tap for br in net.branches])
    shift = np.array([br.phase_shift for br in net.branches])
    b = np.divide(status, x * tap, out=np.zeros_like(x), where=status > 0)
    f = np.array([br.from_bus for br in net.branches], dtype=int)
    t = np.array([br.to_bus for br in net.branches], dtype=int)
    rows = np.r_[f, f, t, t]
    cols = np.r_[f, t, f, t]
    Bbus = sp.csr_matrix((np.r_[b, -b, -b, b], (rows, cols)), shape=(n, n))
    pf_inj = b * -shift
    Pbusinj = np.bincount(f, weights=pf_inj, minlength=n) - np.bincount(t, weights=pf_inj, minlength=n)
    return Bbus, Pbusinj


def solve_dc(net: Network) -> np.ndarray:
    """DC power flow bus angles (rad), slack pinned to its initial angle."""
    Bbus, Pbusinj = susceptance_matrices(net)
    gs = np.array([b.Gs for b in net.buses])
    P = net.injections().real - Pbusinj - gs
    slack = net.slack_bus
    theta_ref = net.buses[slack].Va_init
    keep = np.flatnonzero(np.arange(net.n_bus) != slack)
    Bred = Bbus[keep][:, keep].tocsc()
    rhs = P[keep] - Bbus[keep][:, [slack]].toarray().ravel() * theta_ref
    try:
        theta_keep = splu(Bred).solve(rhs)
    except RuntimeError as exc:
        raise SolverError("singular reduced susceptance matrix (network disconnected?)") from exc
    theta = np.full(net.n_bus, theta_ref)
    theta[keep] = theta_keep
    return theta


def branch_flows(net: Network, sol: PowerFlowSolution) -> tuple[np.ndarray, np.ndarray]:
    """Complex power entering each branch at its from and to ends (pu)."""
    yff, yft, ytf, ytt = branch_stamps(net)
    V = sol.V
    f = np.array([br.from_bus for br in net.branches], dtype=int)
    t = np.array([br.to_bus for br in net.branches], dtype=int)
    If = yff * V[f] + yft * V[t]
    It = ytf * V[f] + ytt * V[t]
    return V[f] * np.conj(If), V[t] * np.conj(It)
