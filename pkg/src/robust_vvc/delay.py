"""Imprecisely known delay: Gaussian delay model, candidate weights and command blending."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

log = logging.getLogger(__name__)


class DelayError(ValueError):
    pass


@dataclass(frozen=True)
class DelayModel:
    t_low: float
    t_high: float
    candidates: tuple[float, ...]
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.candidates:
            raise DelayError("at least one delay candidate is required")
        eps = 1e-12 * max(1.0, abs(self.t_high))
        for c in self.candidates:
            if not self.t_low - eps <= c <= self.t_high + eps:
                raise DelayError(f"candidate {c} outside [{self.t_low}, {self.t_high}]")
        if len(self.candidates) > 1 and not self.sigma > 0:
            raise DelayError("sigma must be positive with more than one candidate")


def candidate_grid(t_low: float, t_high: float, n: int) -> tuple[float, ...]:
    if n < 1:
        raise DelayError("need N >= 1 candidates")
    if n == 1:
        return ((t_low + t_high) / 2.0,)
    return tuple(float(v) for v in np.linspace(t_low, t_high, n))


def fit_delay_model(samples, n: int, t_range: tuple[float, float] = (1.0, 10.0)) -> DelayModel:
    """Fit mean and sample standard deviation from observed delays.

    With ``n > 1`` the candidates are evenly spaced over ``t_range``; a single
    candidate sits at the fitted mean, clipped to the range.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DelayError("empty delay history")
    if x.size < 2:
        raise DelayError("at least two delay samples are needed")
    if n < 1:
        raise DelayError("need N >= 1 candidates")
    return make_delay_model(t_range, n, float(x.mean()), float(x.std(ddof=1)))


def make_delay_model(t_range: tuple[float, float], n: int, mu: float, sigma: float) -> DelayModel:
    lo, hi = map(float, t_range)
    if n == 1:
        cands = (min(max(mu, lo), hi),)
    else:
        cands = candidate_grid(lo, hi, n)
    return DelayModel(lo, hi, cands, float(mu), float(sigma))


def delay_weights(model: DelayModel) -> np.ndarray:
    """Gaussian density at every candidate, normalized to sum to one.

    Computed in log space: as sigma shrinks the weight concentrates on the
    candidate nearest the mean instead of underflowing everywhere.
    """
    c = np.asarray(model.candidates, dtype=float)
    if c.size == 1:
        return np.ones(1)
    with np.errstate(over="ignore", invalid="ignore"):
        logd = -0.5 * ((c - model.mu) / model.sigma) ** 2
    if not np.all(np.isfinite(logd)):
        log.warning("delay densities are not finite; falling back to uniform weights")
        return np.full(c.size, 1.0 / c.size)
    w = np.exp(logd - logd.max())
    return w / w.sum()


def compose_command(per_delay, weights, q_limit=None) -> np.ndarray:
    """Weighted sum of per-delay commands, shape (N, D) -> (D,).

    ``q_limit`` (per inverter, >= 0) re-clamps the blend to ``[-q_limit, q_limit]``.
    """
    q = np.asarray(per_delay, dtype=float)
    w = np.asarray(weights, dtype=float)
    if q.ndim == 1:
        q = q[:, None]
    if q.shape[0] != w.shape[0]:
        raise DelayError(f"{q.shape[0]} per-delay commands for {w.shape[0]} weights")
    out = w @ q
    if q_limit is not None:
        lim = np.asarray(q_limit, dtype=float)
        if lim.shape != out.shape:
            raise DelayError("q_limit length does not match the command length")
        out = np.clip(out, -lim, lim)
    return out


def read_delay_csv(path: str) -> np.ndarray:
    vals = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                vals.append(float(row[0]))
            except ValueError:
                if vals:
                    raise DelayError(f"non-numeric delay {row[0]!r}") from None
                # header line
    return np.array(vals)


def model_summary(model: DelayModel) -> dict:
    d = asdict(model)
    d["candidates"] = list(model.candidates)
    d["weights"] = [float(v) for v in delay_weights(model)]
    return d


def write_model_json(path: str, model: DelayModel) -> None:
    with open(path, "w") as fh:
        json.dump(model_summary(model), fh, indent=2)


def sample_true_delay(model: DelayModel, rng: np.random.Generator, period_s: float = 1.0) -> float:
    """Draw a realized delay: Gaussian, clipped to the range, rounded to the sampling period."""
    d = rng.normal(model.mu, model.sigma) if model.sigma > 0 else model.mu
    d = min(max(d, model.t_low), model.t_high)
    return period_s * math.floor(d / period_s + 0.5)
