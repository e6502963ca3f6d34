import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import sweep_power_flow
from robust_vvc.grid import load_case, parse_case
from robust_vvc.powerflow import (
    NotConvergedError,
    PowerFlowSolution,
    branch_loss,
    branch_losses,
    evaluate,
    make_injections,
    objective_components,
    power_injections,
    solve_power_flow,
    weighted_objective,
    write_solution,
)

TWO_BUS = """\
[meta]
base_mva = 1.0
[bus]
1 1 1 0 0
2 1 0 0.10 0.05
[branch]
1 2 0.02 0.04
[pv]
2 0.12 0.1 0.0 0.6
[regions]
1: 1 2
"""


def _no_pv(net):
    return make_injections(net, np.zeros(net.n_bus), net.load_p, net.load_q)


def _sweep(net, inj):
    s_load = -(inj.p + 1j * inj.q)
    branches = [(b.from_bus - 1, b.to_bus - 1, b.r, b.x) for b in net.branches]
    return sweep_power_flow(net.n_bus, net.slack, branches, s_load)


def independent_mismatch(net, sol, inj):
    V = sol.v * np.exp(1j * sol.theta)
    S = V * np.conj(net.ybus @ V)
    pq = net.non_slack
    return max(np.abs(S.real[pq] - inj.p[pq]).max(), np.abs(S.imag[pq] - inj.q[pq]).max())


def test_flat_case():
    net = parse_case(TWO_BUS.replace("0.10 0.05", "0 0"))
    sol = solve_power_flow(net, _no_pv(net))
    assert sol.converged and sol.iterations == 0
    assert np.all(sol.v == 1.0) and np.all(sol.theta == 0.0)
    assert objective_components(sol, net, 1.0) == (0.0, 0.0, 0.0)


def test_two_bus_against_sweep():
    net = parse_case(TWO_BUS)
    inj = _no_pv(net)
    sol = solve_power_flow(net, inj)
    V, I = _sweep(net, inj)
    assert sol.converged
    assert abs(sol.v[1] - abs(V[1])) < 1e-8
    assert abs(sol.theta[1] - np.angle(V[1])) < 1e-8
    # loss equals I^2 r of the oracle current
    assert branch_loss(sol, net, 0) == pytest.approx(abs(I[0]) ** 2 * 0.02, abs=1e-10)


def test_33_bus_loss_against_sweep():
    net = load_case("ieee33")
    inj = _no_pv(net)
    sol = solve_power_flow(net, inj)
    V, I = _sweep(net, inj)
    ref_loss = sum(abs(I[k]) ** 2 * b.r for k, b in enumerate(net.branches)) * net.base_mva
    loss = branch_losses(sol, net).sum()
    assert abs(loss - ref_loss) / ref_loss < 0.005
    assert 0.1 < loss < 0.3
    assert np.max(np.abs(sol.v - np.abs(V))) < 1e-8


def test_slack_fixed_and_mismatch_reevaluated():
    net = load_case("ieee33")
    inj = _no_pv(net)
    sol = solve_power_flow(net, inj)
    assert (sol.v[net.slack], sol.theta[net.slack]) == (1.0, 0.0)
    assert sol.mismatch <= 1e-8
    assert independent_mismatch(net, sol, inj) <= 1e-8


def test_non_convergence_is_flagged():
    net = parse_case(TWO_BUS.replace("0.10 0.05", "50 40"))
    sol = solve_power_flow(net, _no_pv(net))
    assert not sol.converged and sol.diagnostic
    with pytest.raises(NotConvergedError):
        objective_components(sol, net)
    with pytest.raises(NotConvergedError):
        branch_loss(sol, net, 0)


def test_equal_voltages_zero_loss():
    net = parse_case(TWO_BUS)
    sol = PowerFlowSolution(np.array([1.0, 1.0]), np.zeros(2), True, 0, 0.0)
    assert branch_loss(sol, net, 0) == 0.0


def test_objective_arithmetic():
    net = load_case("toy6")
    sol = PowerFlowSolution(np.array([1.0, 0.98, 1.03, 1.0, 1.0, 1.0]), np.zeros(6), True, 0, 0.0)
    dev, _, mx = objective_components(sol, net, 1.0)
    assert dev == pytest.approx(0.05, abs=1e-12)
    assert mx == pytest.approx(0.03, abs=1e-12)
    assert weighted_objective((0.2, 0.3), 0.5, 0.5) == pytest.approx(0.25)
    assert weighted_objective((0.2, 0.3), 0.0, 1.0) == 0.3
    assert weighted_objective((0.0, 0.0), 0.5, 0.5) == 0.0
    with pytest.raises(ValueError):
        weighted_objective((0.2, 0.3), -1.0, 0.5)


@st.composite
def toy_injections(draw):
    net = load_case("toy6")
    scale = draw(st.floats(0.0, 2.0))
    pv = np.zeros(net.n_bus)
    q = np.zeros(len(net.inverters))
    for k, inv in enumerate(net.inverters):
        pv[inv.bus - 1] = draw(st.floats(0.0, inv.p_max))
        q[k] = draw(st.floats(-0.4, 0.4))
    return net, make_injections(net, pv, scale * net.load_p, scale * net.load_q, q)


@settings(max_examples=80, deadline=None)
@given(toy_injections())
def test_power_flow_invariants(case):
    net, inj = case
    sol = solve_power_flow(net, inj)
    assert sol.converged
    assert independent_mismatch(net, sol, inj) <= 1e-8
    losses = branch_losses(sol, net)
    assert np.all(losses >= -1e-12)
    # total loss equals the net injection of all buses, slack included
    S = power_injections(net, sol.v, sol.theta)
    assert abs(losses.sum() / net.base_mva - S.real.sum()) <= 1e-8
    warm = solve_power_flow(net, inj, start=PowerFlowSolution(sol.v * 0.99, sol.theta * 0.5, True, 0, 0.0))
    assert np.max(np.abs(warm.v - sol.v)) <= 1e-6
    assert np.max(np.abs(warm.theta - sol.theta)) <= 1e-6
    o = evaluate(sol, net, 0.5, 0.5)
    assert min(o.voltage_deviation_sum, o.network_loss, o.max_bus_deviation) >= 0
    assert o.weighted == pytest.approx(0.5 * o.voltage_deviation_sum + 0.5 * o.network_loss, abs=1e-15)


def test_write_solution(tmp_path):
    import json
    net = load_case("toy6")
    sol = solve_power_flow(net, _no_pv(net))
    write_solution(str(tmp_path / "pf"), sol, net)
    rows = (tmp_path / "pf.csv").read_text().splitlines()
    assert rows[0] == "bus,v_pu,theta_rad" and len(rows) == 7
    summary = json.loads((tmp_path / "pf.json").read_text())
    assert summary["converged"] and summary["loss_mw"] > 0
