"""Operating-state history, Gaussian interval prediction and sample selection.

States are stored as arrays of shape ``(3, B)`` with rows
``(pv_p, load_p, load_q)`` in MW / MVAr.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np

from .grid import NetworkModel

PV_P, LOAD_P, LOAD_Q = 0, 1, 2
ELEMENTS = ("pv_p", "load_p", "load_q")


class ForecastError(ValueError):
    pass


@dataclass(frozen=True)
class SystemOperationState:
    pv_p: np.ndarray
    load_p: np.ndarray
    load_q: np.ndarray

    @classmethod
    def from_array(cls, a: np.ndarray) -> "SystemOperationState":
        return cls(a[PV_P], a[LOAD_P], a[LOAD_Q])

    def as_array(self) -> np.ndarray:
        return np.stack([self.pv_p, self.load_p, self.load_q])


@dataclass(frozen=True)
class PredictionInterval:
    lower: np.ndarray  # (3, B)
    upper: np.ndarray  # (3, B)
    horizon: float
    confidence: float


@dataclass(frozen=True)
class SampleSet:
    """The three representative states: index 0 upper, 1 lower, 2 midpoint."""

    states: np.ndarray  # (3 samples, 3 elements, B)

    @property
    def upper(self) -> np.ndarray:
        return self.states[0]

    @property
    def lower(self) -> np.ndarray:
        return self.states[1]

    @property
    def median(self) -> np.ndarray:
        return self.states[2]


class HistoryBuffer:
    """Ring buffer holding the trailing ``window_s`` of measured states."""

    def __init__(self, n_bus: int, window_s: float = 300.0, period_s: float = 1.0):
        self.period = float(period_s)
        self.capacity = int(round(window_s / period_s))
        if self.capacity < 2:
            raise ForecastError("history window must hold at least two samples")
        self._data = np.zeros((self.capacity, 3, n_bus))
        self._next = 0
        self._size = 0

    def push(self, state) -> None:
        a = state.as_array() if isinstance(state, SystemOperationState) else np.asarray(state)
        self._data[self._next] = a
        self._next = (self._next + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, states: np.ndarray) -> None:
        for s in states:
            self.push(s)

    def __len__(self) -> int:
        return self._size

    @property
    def warm(self) -> bool:
        return self._size == self.capacity

    def array(self) -> np.ndarray:
        """Chronological copy, oldest first, shape (len, 3, B)."""
        if self._size < self.capacity:
            return self._data[: self._size].copy()
        return np.roll(self._data, -self._next, axis=0)


def z_value(delta: float) -> float:
    """Two-sided Gaussian quantile for confidence ``delta``."""
    if not 0 < delta < 1:
        raise ForecastError("confidence must lie strictly between 0 and 1")
    return NormalDist().inv_cdf(0.5 + delta / 2.0)


def predict_interval(
    history,
    horizon_s: float,
    delta: float = 0.95,
    period_s: float = 1.0,
    upper_limit: np.ndarray | None = None,
) -> PredictionInterval:
    """Persistence-mean Gaussian interval at ``horizon_s`` seconds ahead.

    The half width is ``z(delta) * sigma * sqrt(horizon / period)`` where
    sigma is the standard deviation of one-step innovations in the history.
    Bounds are clipped to be non-negative and, when ``upper_limit`` (shape
    ``(3, B)``) is given, not above it.
    """
    if isinstance(history, HistoryBuffer):
        if not history.warm:
            raise ForecastError("history buffer is not warm")
        period_s = history.period
        h = history.array()
    else:
        h = np.asarray(history, dtype=float)
        if h.shape[0] < 2:
            raise ForecastError("history needs at least two samples")
    if horizon_s <= 0:
        raise ForecastError("horizon must be positive")
    z = z_value(delta)
    last = h[-1]
    sigma = np.std(np.diff(h, axis=0), axis=0, ddof=1)
    half = z * sigma * math.sqrt(horizon_s / period_s)
    lower = last - half
    upper = last + half
    lo_lim = np.zeros_like(last)
    hi_lim = np.full_like(last, np.inf) if upper_limit is None else upper_limit
    lower = np.clip(lower, lo_lim, hi_lim)
    upper = np.clip(upper, lo_lim, hi_lim)
    return PredictionInterval(lower, upper, float(horizon_s), float(delta))


def sample_select(interval: PredictionInterval) -> SampleSet:
    mid = (interval.lower + interval.upper) / 2.0
    return SampleSet(np.stack([interval.upper, interval.lower, mid]))


def physical_limits(net: NetworkModel, load_headroom: float = np.inf) -> np.ndarray:
    """Upper clipping limits per element and bus: PV capped at p_max, zero where no PV."""
    lim = np.full((3, net.n_bus), load_headroom)
    lim[PV_P] = 0.0
    for inv in net.inverters:
        lim[PV_P, inv.bus - 1] = inv.p_max
    return lim


# ---------------------------------------------------------------- profiles

@dataclass(frozen=True)
class Profiles:
    """Time-indexed operating states at a fixed sampling period."""

    data: np.ndarray  # (T, 3, B)
    period_s: float = 1.0

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) * self.period_s

    def state(self, k: int) -> SystemOperationState:
        return SystemOperationState.from_array(self.data[k])

    def window(self, k_end: int, length: int) -> np.ndarray:
        """States ``k_end - length + 1 .. k_end`` inclusive."""
        if k_end - length + 1 < 0 or k_end >= len(self):
            raise ForecastError(f"window ending at {k_end} of length {length} is outside the profile")
        return self.data[k_end - length + 1: k_end + 1]


def generate_profiles(
    seed: int,
    duration_s: int,
    net: NetworkModel,
    *,
    noise_std: float = 0.004,
    ar_coef: float = 0.998,
    load_ripple: float = 0.1,
    pv_width: float = 1.0 / 6.0,
) -> Profiles:
    """Synthetic 1 s PV and load traces.

    PV follows ``p_max * exp(-((t - T/2) / (pv_width * T))**2)`` and loads
    follow ``base * (1 + load_ripple * cos(2 pi t / T))``; both carry a
    multiplicative AR(1) noise factor ``1 + n_t`` with innovation standard
    deviation ``noise_std``. PV is clipped to ``[0, p_max]`` and loads to be
    non-negative.
    """
    T = int(duration_s)
    if T < 2:
        raise ForecastError("duration must cover at least two samples")
    rng = np.random.default_rng(seed)
    B = net.n_bus
    t = np.arange(T, dtype=float)
    env_pv = np.exp(-(((t - T / 2.0) / (pv_width * T)) ** 2))
    env_load = 1.0 + load_ripple * np.cos(2.0 * np.pi * t / T)

    noise = _ar1(rng, (T, 3, B), noise_std, ar_coef)
    data = np.zeros((T, 3, B))
    pmax = np.zeros(B)
    for inv in net.inverters:
        pmax[inv.bus - 1] = inv.p_max
    data[:, PV_P] = np.clip(env_pv[:, None] * pmax[None, :] * (1.0 + noise[:, PV_P]), 0.0, pmax[None, :])
    data[:, LOAD_P] = np.maximum(env_load[:, None] * net.load_p[None, :] * (1.0 + noise[:, LOAD_P]), 0.0)
    data[:, LOAD_Q] = np.maximum(env_load[:, None] * net.load_q[None, :] * (1.0 + noise[:, LOAD_Q]), 0.0)
    return Profiles(data, 1.0)


def _ar1(rng: np.random.Generator, shape, innov_std: float, phi: float) -> np.ndarray:
    """AR(1) paths along axis 0 started from the stationary distribution."""
    e = rng.standard_normal(shape) * innov_std
    out = np.empty(shape)
    stat = innov_std / math.sqrt(1.0 - phi * phi) if phi < 1 else innov_std
    out[0] = rng.standard_normal(shape[1:]) * stat
    for k in range(1, shape[0]):
        out[k] = phi * out[k - 1] + e[k]
    return out


def write_profiles(path: str, prof: Profiles, net: NetworkModel) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "bus", "pv_p_mw", "load_p_mw", "load_q_mvar"])
        for k in range(len(prof)):
            t = k * prof.period_s
            for i in range(net.n_bus):
                d = prof.data[k, :, i]
                w.writerow([repr(t), net.buses[i].id, repr(float(d[0])), repr(float(d[1])), repr(float(d[2]))])


def read_profiles(path: str, net: NetworkModel) -> Profiles:
    """Load a long-format profile CSV; rows must cover every bus at every time stamp."""
    rows: dict[float, dict[int, tuple[float, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"t_s", "bus", "pv_p_mw", "load_p_mw", "load_q_mvar"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ForecastError(f"profile CSV needs columns {sorted(need)}")
        for r in reader:
            try:
                t = float(r["t_s"])
                rows.setdefault(t, {})[int(r["bus"])] = (
                    float(r["pv_p_mw"]), float(r["load_p_mw"]), float(r["load_q_mvar"]))
            except ValueError as exc:
                raise ForecastError(f"bad profile row {r}: {exc}") from None
    times = sorted(rows)
    if len(times) < 2:
        raise ForecastError("profile CSV holds fewer than two time stamps")
    period = times[1] - times[0]
    data = np.zeros((len(times), 3, net.n_bus))
    for k, t in enumerate(times):
        per_bus = rows[t]
        if len(per_bus) != net.n_bus:
            raise ForecastError(f"time {t}: expected {net.n_bus} buses, got {len(per_bus)}")
        for bid, vals in per_bus.items():
            data[k, :, bid - 1] = vals
    return Profiles(data, period)
