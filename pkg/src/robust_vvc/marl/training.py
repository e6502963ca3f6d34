"""Episode loop: act on predicted samples, robust step, store, learn."""
from __future__ import annotations

import csv
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from ..env import VVCEnv, shaping_term
from .agents import Ensemble, LearnerConfig, NoiseSchedule
from .buffer import ReplayBuffer

log = logging.getLogger(__name__)

CURVE_FIELDS = ["episode", "mean_reward", "r_ll", "r_vd", "phi"]


@dataclass
class TrainResult:
    ensemble: Ensemble
    curve: list = field(default_factory=list)  # dicts keyed by CURVE_FIELDS
    starts: list = field(default_factory=list)  # episode start index
    steps: list = field(default_factory=list)  # completed steps per episode
    stored: int = 0
    failures: int = 0

    @property
    def rewards(self) -> np.ndarray:
        return np.array([row["mean_reward"] for row in self.curve])


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def train(env: VVCEnv, cfg: LearnerConfig, episodes: int, seed: int | Sequence[int] = 0,
          episode_length: int | None = None, start_range: tuple[int, int] | None = None,
          progress=None) -> TrainResult:
    """Train one ensemble on ``env``; fully determined by ``seed`` and the inputs.

    Episode start indices are drawn uniformly from ``start_range`` (inclusive),
    by default every start that leaves a full episode of profile data.
    """
    L = env.cfg.episode_length if episode_length is None else int(episode_length)
    init_rng, explore_rng, sample_rng, start_rng = _streams(seed)
    ens = Ensemble.for_env(env, cfg, init_rng)
    env.reset_shaping()
    result = TrainResult(ens)
    if episodes <= 0:
        return result
    lo, hi = start_range if start_range is not None else (env.first_start, env.last_start(L))
    lo, hi = max(lo, env.first_start), min(hi, env.last_start(L))
    if hi < lo:
        raise ValueError(f"no admissible episode start in [{lo}, {hi}]")
    buf = ReplayBuffer(cfg.buffer_capacity, env.state_dim, ens.joint_dim, sum(ens.obs_dims))
    noise = NoiseSchedule(cfg.noise_init, cfg.noise_min, cfg.noise_decay_steps)
    budget = cfg.total_iterations if cfg.total_iterations > 0 else None

    env_steps = 0
    for ep in range(episodes):
        t0 = int(start_rng.integers(lo, hi + 1))
        obs = env.reset(t0, L)
        state = env.state
        rewards, r_ll, r_vd = [], [], []
        phi = 0.0
        for _ in range(L):
            warm = env_steps < cfg.warmup_steps
            if warm:
                actions = ens.random_actions(explore_rng)
            else:
                actions = ens.select_actions(obs, noise.value, explore_rng)
            out = env.step(actions)
            env_steps += 1
            if not out.done:
                result.failures += 1
                break
            F = shaping_term(out.phi_prev, out.phi_next, cfg.gamma, initial=out.initial)
            for _ in range(max(1, cfg.replay_repeat)):
                buf.add(state, out.state, out.extras["ratios"], out.reward, F,
                        ens.stack_obs(obs), ens.stack_obs(out.observations))
                result.stored += 1
            state, obs = out.state, out.observations
            rewards.append(out.reward)
            r_ll.append(out.r_ll)
            r_vd.append(out.r_vd)
            phi = out.phi_next
            if warm:
                continue
            for _ in range(max(1, cfg.iterations_per_step)):
                if len(buf) < cfg.batch_size or (budget is not None and ens.iterations >= budget):
                    break
                ens.update(buf.sample(sample_rng, cfg.batch_size), sample_rng)
            noise.step()
        env.end_episode()
        result.starts.append(t0)
        result.steps.append(len(rewards))
        row = {
            "episode": ep,
            "mean_reward": float(np.mean(rewards)) if rewards else float("nan"),
            "r_ll": float(np.mean(r_ll)) if r_ll else float("nan"),
            "r_vd": float(np.mean(r_vd)) if r_vd else float("nan"),
            "phi": float(phi),
        }
        result.curve.append(row)
        if progress is not None:
            progress(row)
    return result


def write_curve(path: str, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for row in curve:
            w.writerow([row["episode"]] + [repr(float(row[k])) for k in CURVE_FIELDS[1:]])


def read_curve(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return [{"episode": int(r["episode"]), **{k: float(r[k]) for k in CURVE_FIELDS[1:]}}
                for r in csv.DictReader(fh)]
