"""Robust Volt/Var control as a decentralized POMDP.

Each region is one agent. At every decision step the agent sees, for each
of the three representative predicted states (upper, lower, midpoint), the
slice of that state on its own buses, and proposes one reactive-power ratio
per owned inverter for each of the three states. The environment solves one
power flow per state, scores it, and the state with the largest objective
decides the reward and the executed command.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import forecast as fc
from .grid import NetworkModel
from .powerflow import ObjectiveValue, PowerFlowSolution, evaluate, make_injections, solve_power_flow

log = logging.getLogger(__name__)

N_SAMPLES = 3
V_SCALE = 0.05
THETA_SCALE = 0.05


class EnvError(ValueError):
    pass


# ---------------------------------------------------------------- inverter model

def action_to_q(a, p_pv, s_cap, beta, p_max=None, p_min=0.0):
    """Map reactive ratios to inverter reactive power.

    ``q = a * sqrt(s^2 - p^2)``, then clamped so that ``|q| <= beta * s`` and
    ``p^2 + q^2 <= s^2``. Active power above ``s`` (or outside
    ``[p_min, p_max]``) is curtailed first. Returns ``(q, p_dispatched)``.
    Works elementwise on scalars or arrays.
    """
    a = np.asarray(a, dtype=float)
    s = np.asarray(s_cap, dtype=float)
    hi = s if p_max is None else np.minimum(s, p_max)
    p = np.clip(np.asarray(p_pv, dtype=float), p_min, hi)
    head = np.sqrt(np.maximum(s * s - p * p, 0.0))
    lim = np.minimum(np.asarray(beta, dtype=float) * s, head)
    q = np.clip(a * head, -lim, lim)
    return q, p


def q_limits(net: NetworkModel, p_pv: np.ndarray, beta: float | None = None) -> np.ndarray:
    """Largest admissible |q| per inverter at the given inverter active powers."""
    s = np.array([inv.s_cap for inv in net.inverters])
    b = np.array([inv.beta if beta is None else beta for inv in net.inverters])
    p = np.minimum(np.asarray(p_pv, dtype=float), s)
    return np.minimum(b * s, np.sqrt(np.maximum(s * s - p * p, 0.0)))


def add_observation_noise(obs, sigma_obs: float, rng: np.random.Generator | None = None):
    """Isotropic Gaussian sensor noise; identity when ``sigma_obs == 0``."""
    if sigma_obs < 0:
        raise EnvError("sigma_obs must be non-negative")
    obs = np.asarray(obs, dtype=float)
    if sigma_obs == 0:
        return obs
    if rng is None:
        rng = np.random.default_rng()
    return obs + rng.normal(0.0, sigma_obs, size=obs.shape)


def select_worst(f) -> tuple[int, np.ndarray]:
    """Index of the largest objective (lowest index on ties) and its one-hot indicator."""
    f = np.asarray(f, dtype=float)
    j = int(np.argmax(f))
    psi = np.zeros(f.shape[0])
    psi[j] = 1.0
    return j, psi


# ---------------------------------------------------------------- reward shaping

@dataclass
class ShapingTracker:
    """Running episode sums and historical episode-total extremes per reward component."""

    sum_ll: float = 0.0
    sum_vd: float = 0.0
    max_ll: float | None = None
    min_ll: float | None = None
    max_vd: float | None = None
    min_vd: float | None = None
    episodes: int = 0

    def add(self, r_ll: float, r_vd: float) -> None:
        self.sum_ll += r_ll
        self.sum_vd += r_vd

    def end_episode(self) -> None:
        if self.episodes == 0:
            self.max_ll = self.min_ll = self.sum_ll
            self.max_vd = self.min_vd = self.sum_vd
        else:
            self.max_ll = max(self.max_ll, self.sum_ll)
            self.min_ll = min(self.min_ll, self.sum_ll)
            self.max_vd = max(self.max_vd, self.sum_vd)
            self.min_vd = min(self.min_vd, self.sum_vd)
        self.episodes += 1

    def start_episode(self) -> None:
        self.sum_ll = 0.0
        self.sum_vd = 0.0


def _fraction(total: float, hi: float, lo: float) -> float:
    if hi == lo:
        return 0.0
    return min(0.0, max(-1.0, (total - hi) / (hi - lo)))


def shaping_potential(tracker: ShapingTracker) -> float:
    """Potential in [0, 1]; zero until one episode has been recorded."""
    if tracker.episodes == 0:
        return 0.0
    f_ll = _fraction(tracker.sum_ll, tracker.max_ll, tracker.min_ll)
    f_vd = _fraction(tracker.sum_vd, tracker.max_vd, tracker.min_vd)
    return 0.5 * (1.0 + f_ll) + 0.5 * (1.0 + f_vd)


def shaping_term(phi_prev: float, phi_next: float, gamma: float, initial: bool = False) -> float:
    """Potential-based shaping ``gamma * phi_next - phi_prev``; zero out of the initial state."""
    if initial:
        return 0.0
    return gamma * phi_next - phi_prev


def update_tracker(tracker: ShapingTracker, r_ll: float, r_vd: float, episode_end: bool = False) -> ShapingTracker:
    tracker.add(r_ll, r_vd)
    if episode_end:
        tracker.end_episode()
    return tracker


# ---------------------------------------------------------------- environment

@dataclass
class EnvConfig:
    eta: float = 0.8
    beta: float | None = None  # overrides every inverter's beta when set
    lam1: float = 0.5
    lam2: float = 0.5
    v_ref: float | None = None
    episode_length: int = 1000
    delta: float = 0.95
    history_s: float = 300.0
    sigma_obs: float = 0.0
    track_baseline: bool = False
    noise_seed: int = 0


@dataclass
class StepOutcome:
    reward: float
    j_star: int
    psi: np.ndarray
    f: np.ndarray
    objectives: list
    observations: list | None
    state: np.ndarray | None
    done: bool
    q_exec: np.ndarray
    solution: PowerFlowSolution | None
    r_ll: float = 0.0
    r_vd: float = 0.0
    phi_prev: float = 0.0
    phi_next: float = 0.0
    initial: bool = False
    baseline_f: float | None = None
    t: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def storable(self) -> bool:
        return self.done


class VVCEnv:
    """Dec-POMDP environment for one prediction horizon (one delay candidate).

    ``profiles`` is the ground-truth trace; sensor noise, when configured, is
    applied once to build the measured trace used for prediction.
    """

    def __init__(self, net: NetworkModel, profiles: fc.Profiles, horizon_s: float, cfg: EnvConfig | None = None):
        self.net = net
        self.profiles = profiles
        self.horizon = float(horizon_s)
        self.cfg = cfg or EnvConfig()
        if self.horizon <= 0:
            raise EnvError("prediction horizon must be positive")
        self.period = profiles.period_s
        self.hist_len = int(round(self.cfg.history_s / self.period))
        rng = np.random.default_rng(self.cfg.noise_seed)
        self.measured = add_observation_noise(profiles.data, self.cfg.sigma_obs, rng)
        if self.cfg.sigma_obs > 0:
            self.measured = np.maximum(self.measured, 0.0)
        self.limits = fc.physical_limits(net)
        self.v_ref = net.v_ref if self.cfg.v_ref is None else self.cfg.v_ref

        self.inv_bus = net.inverter_index
        self.s_cap = np.array([inv.s_cap for inv in net.inverters])
        self.p_max = np.array([inv.p_max for inv in net.inverters])
        self.p_min = np.array([inv.p_min for inv in net.inverters])
        self.beta = np.array([inv.beta if self.cfg.beta is None else self.cfg.beta for inv in net.inverters])
        self.region_buses = net.region_buses
        self.region_inv = net.region_inverters
        scale = max(float(self.p_max.max(initial=0.0)), float(net.load_p.max()), float(net.load_q.max()))
        self.obs_scale = scale if scale > 0 else 1.0

        self.tracker = ShapingTracker()
        self._samples_cache: dict[int, np.ndarray] = {}
        self.t = None
        self.q_prev = np.zeros(len(net.inverters))
        self.state = None
        self.samples = None
        self.steps = 0

    # -- dimensions
    @property
    def n_agents(self) -> int:
        return self.net.n_regions

    def obs_dim(self, m: int) -> int:
        return 3 * len(self.region_buses[m])

    def act_dim(self, m: int) -> int:
        return len(self.region_inv[m])

    @property
    def state_dim(self) -> int:
        return 5 * self.net.n_bus + len(self.net.inverters)

    @property
    def first_start(self) -> int:
        return self.hist_len - 1

    def last_start(self, episode_length: int | None = None) -> int:
        L = self.cfg.episode_length if episode_length is None else episode_length
        return len(self.profiles) - 1 - L

    # -- prediction
    def samples_at(self, t: int) -> np.ndarray:
        """Sample set (3, 3, B) predicted at time index ``t`` for this horizon."""
        cached = self._samples_cache.get(t)
        if cached is not None:
            return cached
        if t - self.hist_len + 1 < 0 or t >= len(self.profiles):
            raise EnvError(f"no warm history at t={t}")
        window = self.measured[t - self.hist_len + 1: t + 1]
        iv = fc.predict_interval(window, self.horizon, self.cfg.delta, self.period, self.limits)
        ss = fc.sample_select(iv).states
        self._samples_cache[t] = ss
        return ss

    def observe(self, samples: np.ndarray) -> list[np.ndarray]:
        """Per agent, an array (3, 3*|B_m|): one scaled observation per sample."""
        out = []
        for buses in self.region_buses:
            out.append(samples[:, :, buses].reshape(N_SAMPLES, -1) / self.obs_scale)
        return out

    def encode_state(self, sos: np.ndarray, q: np.ndarray, sol: PowerFlowSolution) -> np.ndarray:
        return np.concatenate([
            sos.ravel() / self.obs_scale,
            q / self.s_cap,
            (sol.v - self.v_ref) / V_SCALE,
            sol.theta / THETA_SCALE,
        ])

    # -- physics
    def dispatch(self, a: np.ndarray, pv_p_bus: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Ratios (D,) on a per-bus PV vector -> (q per inverter, dispatched p per inverter)."""
        return action_to_q(a, pv_p_bus[self.inv_bus], self.s_cap, self.beta, self.p_max, self.p_min)

    def solve(self, sos: np.ndarray, q: np.ndarray, p_inv: np.ndarray | None = None) -> PowerFlowSolution:
        pv = sos[fc.PV_P]
        if p_inv is not None:
            pv = pv.copy()
            pv[self.inv_bus] = p_inv
        return solve_power_flow(self.net, make_injections(self.net, pv, sos[fc.LOAD_P], sos[fc.LOAD_Q], q))

    def score(self, sol: PowerFlowSolution) -> ObjectiveValue:
        return evaluate(sol, self.net, self.cfg.lam1, self.cfg.lam2, self.v_ref)

    def evaluate_samples(self, samples: np.ndarray, ratios: np.ndarray):
        """Solve and score every sample j with its own ratio vector ``ratios[j]``.

        Returns (f (3,), objectives, solutions, q (3, D), converged flag).
        """
        f = np.full(N_SAMPLES, np.nan)
        objs, sols, qs = [], [], []
        ok = True
        for j in range(N_SAMPLES):
            q, p = self.dispatch(ratios[j], samples[j, fc.PV_P])
            sol = self.solve(samples[j], q, p)
            qs.append(q)
            sols.append(sol)
            if sol.converged:
                o = self.score(sol)
                f[j] = o.weighted
                objs.append(o)
            else:
                ok = False
                objs.append(None)
        return f, objs, sols, np.array(qs), ok

    def robust_objective(self, samples: np.ndarray, a: np.ndarray) -> tuple[float, np.ndarray, bool]:
        """Worst-sample objective of one shared ratio vector applied to all three samples."""
        f, _, _, _, ok = self.evaluate_samples(samples, np.broadcast_to(a, (N_SAMPLES, len(a))))
        return (float(np.max(f)) if ok else float("inf")), f, ok

    # -- episode API
    def reset(self, t: int, episode_length: int | None = None) -> list[np.ndarray]:
        L = self.cfg.episode_length if episode_length is None else episode_length
        if t < self.first_start:
            raise EnvError(f"t={t} precedes a warm {self.cfg.history_s:.0f} s history")
        if t > self.last_start(L):
            raise EnvError(f"t={t} leaves fewer than {L} steps of profile data")
        self.t = int(t)
        self.steps = 0
        self.q_prev = np.zeros(len(self.net.inverters))
        self.tracker.start_episode()
        self.samples = self.samples_at(self.t)
        zero = np.zeros((N_SAMPLES, len(self.net.inverters)))
        f, _, sols, _, ok = self.evaluate_samples(self.samples, zero)
        j = int(np.argmax(np.where(np.isfinite(f), f, -np.inf))) if ok else 2
        self.state = self.encode_state(self.samples[j], self.q_prev, sols[j])
        return self.observe(self.samples)

    def joint_ratios(self, actions: list[np.ndarray]) -> np.ndarray:
        """Per-agent (3, |D_m|) ratio arrays -> (3, D) in inverter order."""
        a = np.zeros((N_SAMPLES, len(self.net.inverters)))
        for m, idx in enumerate(self.region_inv):
            a[:, idx] = np.asarray(actions[m], dtype=float).reshape(N_SAMPLES, len(idx))
        return a

    def step(self, actions: list[np.ndarray]) -> StepOutcome:
        if self.t is None:
            raise EnvError("step() before reset()")
        ratios = np.clip(self.joint_ratios(actions), -self.cfg.eta, self.cfg.eta)
        f, objs, sols, qs, ok = self.evaluate_samples(self.samples, ratios)
        initial = self.steps == 0
        t_now = self.t
        if not ok:
            log.debug("power flow failed at t=%d; episode ends without a transition", t_now)
            return StepOutcome(
                reward=float("nan"), j_star=-1, psi=np.zeros(N_SAMPLES), f=f, objectives=objs,
                observations=None, state=None, done=False, q_exec=np.zeros(len(self.net.inverters)),
                solution=None, initial=initial, t=t_now)
        j, psi = select_worst(f)
        obj = objs[j]
        reward = -float(f[j])
        r_ll = -self.cfg.lam2 * obj.network_loss
        r_vd = -self.cfg.lam1 * obj.voltage_deviation_sum
        phi_prev = shaping_potential(self.tracker)
        self.tracker.add(r_ll, r_vd)
        phi_next = shaping_potential(self.tracker)

        baseline = None
        if self.cfg.track_baseline:
            baseline, _, _ = self.robust_objective(self.samples, np.zeros(len(self.net.inverters)))

        q_exec = qs[j]
        next_state = self.encode_state(self.samples[j], q_exec, sols[j])
        self.q_prev = q_exec
        self.t += 1
        self.steps += 1
        self.samples = self.samples_at(self.t)
        obs = self.observe(self.samples)
        self.state = next_state
        return StepOutcome(
            reward=reward, j_star=j, psi=psi, f=f, objectives=objs, observations=obs,
            state=next_state, done=True, q_exec=q_exec, solution=sols[j], r_ll=r_ll, r_vd=r_vd,
            phi_prev=phi_prev, phi_next=phi_next, initial=initial, baseline_f=baseline, t=t_now,
            extras={"ratios": ratios[j]})

    def end_episode(self) -> None:
        self.tracker.end_episode()

    def reset_shaping(self) -> None:
        """Forget the recorded episode history (start of a new training run)."""
        self.tracker = ShapingTracker()


TRACE_FIELDS = ["t", "j_star", "f1", "f2", "f3", "reward", "loss_mw", "dev_sum", "max_dev", "done"]


def trace_row(out: StepOutcome) -> list:
    if out.done:
        o = out.objectives[out.j_star]
        vals = [o.network_loss, o.voltage_deviation_sum, o.max_bus_deviation]
    else:
        vals = [float("nan")] * 3
    return [out.t, out.j_star + 1 if out.done else 0, *map(float, out.f), out.reward, *vals, int(out.done)]


def write_trace(path: str, outcomes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_FIELDS)
        for o in outcomes:
            w.writerow([repr(v) if isinstance(v, float) else v for v in trace_row(o)])
