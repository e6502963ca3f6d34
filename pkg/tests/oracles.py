"""Reference computations that share no code with the package under test."""
import math

import numpy as np


def sweep_power_flow(n_bus, slack, branches, s_load, tol=1e-13, max_iter=500):
    """Backward/forward sweep on a radial feeder.

    branches: list of (from, to, r, x) with zero-based bus indices.
    s_load: complex per-unit load (consumption positive) per bus.
    Returns complex bus voltages and complex branch currents (parent -> child).
    """
    children = {i: [] for i in range(n_bus)}
    adj = {i: [] for i in range(n_bus)}
    for k, (f, t, r, x) in enumerate(branches):
        adj[f].append((t, k))
        adj[t].append((f, k))
    parent_branch = {}
    order = [slack]
    seen = {slack}
    for u in order:
        for v, k in adj[u]:
            if v not in seen:
                seen.add(v)
                parent_branch[v] = (u, k)
                children[u].append(v)
                order.append(v)
    V = np.ones(n_bus, dtype=complex)
    I_br = np.zeros(len(branches), dtype=complex)
    for _ in range(max_iter):
        I_load = np.conj(np.asarray(s_load) / V)
        I_node = I_load.copy()
        for u in reversed(order[1:]):
            p, k = parent_branch[u]
            I_br[k] = I_node[u]
            I_node[p] += I_node[u]
        V_new = V.copy()
        for u in order[1:]:
            p, k = parent_branch[u]
            _, _, r, x = branches[k]
            V_new[u] = V_new[p] - complex(r, x) * I_br[k]
        delta = np.max(np.abs(V_new - V))
        V = V_new
        if delta < tol:
            break
    return V, I_br


def normal_pdf(x, mu, sigma):
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at array x."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))
