"""Polar Newton-Raphson AC power flow and the Volt/Var objective terms."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .grid import NetworkModel

TOL = 1e-8
MAX_ITER = 20


class NotConvergedError(ValueError):
    pass


@dataclass(frozen=True)
class Injections:
    """Net per-unit injections, generation positive: p = p_pv - p_load."""

    p: np.ndarray
    q: np.ndarray


@dataclass(frozen=True)
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    converged: bool
    iterations: int
    mismatch: float
    diagnostic: str = ""

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


@dataclass(frozen=True)
class ObjectiveValue:
    voltage_deviation_sum: float  # p.u.
    network_loss: float  # MW
    weighted: float
    max_bus_deviation: float  # p.u.


def make_injections(net: NetworkModel, pv_p, load_p, load_q, q_pv=None) -> Injections:
    """Build per-unit injections from per-bus MW/MVAr quantities.

    ``pv_p``, ``load_p`` and ``load_q`` are per bus; ``q_pv`` is per inverter
    (declaration order) and defaults to zero.
    """
    p = (np.asarray(pv_p, dtype=float) - np.asarray(load_p, dtype=float)) / net.base_mva
    q = -np.asarray(load_q, dtype=float) / net.base_mva
    if q_pv is not None:
        q = q.copy()
        np.add.at(q, net.inverter_index, np.asarray(q_pv, dtype=float) / net.base_mva)
    return Injections(p, q)


def power_injections(net: NetworkModel, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Complex power leaving the network at every bus, S = V conj(Y V)."""
    V = v * np.exp(1j * theta)
    return V * np.conj(net.ybus @ V)


def mismatch(net: NetworkModel, sol_v, sol_theta, inj: Injections) -> np.ndarray:
    """Per non-slack bus residuals of both balance equations, stacked [dP; dQ]."""
    s = power_injections(net, sol_v, sol_theta)
    pq = _pq(net)
    return np.concatenate([s.real[pq] - inj.p[pq], s.imag[pq] - inj.q[pq]])


def _pq(net: NetworkModel) -> np.ndarray:
    return net.non_slack


def solve_power_flow(
    net: NetworkModel,
    inj: Injections,
    start: PowerFlowSolution | None = None,
    tol: float = TOL,
    max_iter: int = MAX_ITER,
) -> PowerFlowSolution:
    """Solve the AC power-flow equations with every non-slack bus as PQ.

    Non-convergence (or a singular Jacobian) is reported through
    ``converged=False`` rather than raised.
    """
    n = net.n_bus
    pq = _pq(net)
    npq = len(pq)
    Y = net.ybus
    if start is not None:
        v, theta = start.v.astype(float).copy(), start.theta.astype(float).copy()
    else:
        v, theta = np.ones(n), np.zeros(n)
    v[net.slack], theta[net.slack] = 1.0, 0.0

    def residual():
        V = v * np.exp(1j * theta)
        I = Y @ V
        S = V * np.conj(I)
        F = np.concatenate([S.real[pq] - inj.p[pq], S.imag[pq] - inj.q[pq]])
        return F, V, I

    F, V, I = residual()
    err = float(np.max(np.abs(F))) if npq else 0.0
    it = 0
    Ypq = Y[np.ix_(pq, pq)]
    J = np.empty((2 * npq, 2 * npq))
    while err > tol and it < max_iter:
        Vp = V[pq]
        Vn = Vp / np.abs(Vp)
        Ip = I[pq]
        dS_dVa = -1j * Vp[:, None] * np.conj(Ypq * Vp[None, :])
        dS_dVa[np.diag_indices(npq)] += 1j * Vp * np.conj(Ip)
        dS_dVm = Vp[:, None] * np.conj(Ypq * Vn[None, :])
        dS_dVm[np.diag_indices(npq)] += np.conj(Ip) * Vn
        J[:npq, :npq] = dS_dVa.real
        J[:npq, npq:] = dS_dVm.real
        J[npq:, :npq] = dS_dVa.imag
        J[npq:, npq:] = dS_dVm.imag
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return PowerFlowSolution(v, theta, False, it, err, "singular Jacobian")
        theta[pq] += dx[:npq]
        v[pq] += dx[npq:]
        it += 1
        F, V, I = residual()
        err = float(np.max(np.abs(F)))
        if not np.isfinite(err):
            return PowerFlowSolution(v, theta, False, it, err, "diverged")
    converged = err <= tol
    diag = "" if converged else f"no convergence after {it} iterations"
    return PowerFlowSolution(v, theta, converged, it, err, diag)


def _require(sol: PowerFlowSolution) -> None:
    if not sol.converged:
        raise NotConvergedError(f"power flow did not converge ({sol.diagnostic})")


def branch_losses(sol: PowerFlowSolution, net: NetworkModel) -> np.ndarray:
    """Real power dissipated on every branch in MW: |V_i - V_j|^2 * g."""
    _require(sol)
    f, t = net.branch_ends
    V = sol.voltage
    dv = V[f] - V[t]
    return (dv.real ** 2 + dv.imag ** 2) * net.branch_g * net.base_mva


def branch_loss(sol: PowerFlowSolution, net: NetworkModel, k: int) -> float:
    return float(branch_losses(sol, net)[k])


def objective_components(sol: PowerFlowSolution, net: NetworkModel, v_ref: float | None = None):
    """Return ``(deviation_sum, loss_mw, max_deviation)`` of a converged solution."""
    _require(sol)
    if v_ref is None:
        v_ref = net.v_ref
    dev = np.abs(sol.v - v_ref)
    return float(dev.sum()), float(branch_losses(sol, net).sum()), float(dev.max())


def weighted_objective(components, lam1: float, lam2: float) -> float:
    if lam1 < 0 or lam2 < 0:
        raise ValueError("objective weights must be non-negative")
    return lam1 * components[0] + lam2 * components[1]


def evaluate(sol: PowerFlowSolution, net: NetworkModel, lam1: float = 0.5, lam2: float = 0.5,
             v_ref: float | None = None) -> ObjectiveValue:
    comp = objective_components(sol, net, v_ref)
    return ObjectiveValue(comp[0], comp[1], weighted_objective(comp, lam1, lam2), comp[2])


def write_solution(prefix: str, sol: PowerFlowSolution, net: NetworkModel) -> None:
    """Dump ``<prefix>.csv`` (bus,v_pu,theta_rad) and ``<prefix>.json`` (summary)."""
    with open(f"{prefix}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bus", "v_pu", "theta_rad"])
        for i in range(net.n_bus):
            w.writerow([net.buses[i].id, repr(float(sol.v[i])), repr(float(sol.theta[i]))])
    summary = {"converged": sol.converged, "iterations": sol.iterations}
    if sol.converged:
        dev, loss, _ = objective_components(sol, net)
        summary.update(loss_mw=loss, deviation_sum=dev)
    with open(f"{prefix}.json", "w") as fh:
        json.dump(summary, fh, indent=2)
