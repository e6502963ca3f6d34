"""Experiment configuration: an INI-style key-value file mirroring :class:`ExperimentConfig`.

Every key is optional; omitted keys keep their defaults. Sections only group
keys for readability, and a key must appear in its own section::

    [case]
    case = toy6

    [train]
    episodes = 300
    algorithm = mpnrs-matd3
"""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

from ..env import EnvConfig
from ..marl.agents import ALGORITHMS, LearnerConfig


class ConfigError(ValueError):
    pass


def _f(section: str, default, doc: str = ""):
    return field(default=default, metadata={"section": section, "doc": doc})


@dataclass
class ExperimentConfig:
    # network and data
    case: str = _f("case", "ieee33", "shipped case name or path to a .case file")
    profile_seed: int = _f("profiles", 1, "seed of the training profile")
    test_profile_seed: int = _f("profiles", 2, "seed of the disjoint test profile")
    profile_duration_s: int = _f("profiles", 86400)
    profile_path: str = _f("profiles", "", "optional profile CSV replacing the synthetic training trace")
    test_profile_path: str = _f("profiles", "", "optional profile CSV replacing the synthetic test trace")
    # predictor
    delta: float = _f("predictor", 0.95, "interval confidence level")
    history_s: float = _f("predictor", 300.0, "history window t0")
    period_s: float = _f("predictor", 1.0, "sampling and decision period")
    # delay model
    delay_low: float = _f("delay", 1.0)
    delay_high: float = _f("delay", 10.0)
    delay_n: int = _f("delay", 15, "number of delay candidates")
    delay_mu: float = _f("delay", 5.5)
    delay_sigma: float = _f("delay", 2.0)
    delay_history: str = _f("delay", "", "optional one-column CSV of observed delays; overrides mu and sigma")
    delays: str = _f("delay", "", "comma-separated candidate indices to train; empty trains all")
    # objective and environment
    lam1: float = _f("objective", 0.5)
    lam2: float = _f("objective", 0.5)
    eta: float = _f("env", 0.8)
    beta: float | None = _f("env", None, "overrides every inverter's beta when set")
    v_ref: float | None = _f("env", None, "overrides the case reference voltage when set")
    episode_length: int = _f("env", 1000)
    sigma_obs: float = _f("env", 0.0, "sensor noise std on measured states")
    # learner
    algorithm: str = _f("train", "mpnrs-matd3", "one of " + ", ".join(ALGORITHMS))
    episodes: int = _f("train", 300)
    gamma: float = _f("train", 0.9)
    lr: float = _f("train", 5e-4)
    xi: float = _f("train", 0.01)
    batch_size: int = _f("train", 32)
    buffer_capacity: int = _f("train", 10_000)
    shaping_lambda: float = _f("train", 1.0)
    policy_hidden: str = _f("train", "256,256")
    critic_hidden: str = _f("train", "", "empty: 2d,d with d the agent observation size")
    noise_init: float = _f("train", 0.1)
    noise_min: float = _f("train", 0.02)
    noise_decay_steps: int = _f("train", 200)
    replay_repeat: int = _f("train", 1)
    iterations_per_step: int = _f("train", 1)
    total_iterations: int = _f("train", 4000, "gradient-iteration budget per trained ensemble; 0 is unbounded")
    warmup_steps: int = _f("train", 1000)
    shared_noise: bool = _f("train", True)
    policy_delay: int = _f("train", 1)
    target_noise: float = _f("train", 0.0)
    target_noise_clip: float = _f("train", 0.5)
    # evaluation
    eval_episodes: int = _f("eval", 1)
    test_steps: int = _f("eval", 1800)
    test_start: int = _f("eval", -1, "first test index; -1 draws seeded random starts")
    no_control: bool = _f("eval", True, "also report the zero-command baseline")
    grid_points: int = _f("eval", 21, "brute-force grid resolution per inverter")
    bruteforce_steps: int = _f("eval", 20)
    # seeds and output
    train_seed: int = _f("seeds", 0)
    eval_seed: int = _f("seeds", 0)
    out: str = _f("output", "runs/default")

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not self.delay_low <= self.delay_high:
            raise ConfigError("delay_low must not exceed delay_high")
        if self.delay_low <= 0:
            raise ConfigError("delays must be positive")
        if self.delay_n < 1:
            raise ConfigError("delay_n must be at least 1")
        if self.delay_n > 1 and not self.delay_sigma > 0:
            raise ConfigError("delay_sigma must be positive with more than one candidate")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.lam1 < 0 or self.lam2 < 0:
            raise ConfigError("objective weights must be non-negative")
        if not 0 < self.eta:
            raise ConfigError("eta must be positive")
        if self.beta is not None and not 0 <= self.beta <= 1:
            raise ConfigError("beta must lie in [0, 1]")
        if self.episode_length < 1 or self.episodes < 0:
            raise ConfigError("episode_length must be positive and episodes non-negative")
        if self.period_s <= 0 or self.history_s < 2 * self.period_s:
            raise ConfigError("history must hold at least two samples")
        if self.sigma_obs < 0:
            raise ConfigError("sigma_obs must be non-negative")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ConfigError("buffer_capacity must be at least batch_size")
        if not 0 <= self.xi <= 1 or not 0 <= self.gamma <= 1:
            raise ConfigError("xi and gamma must lie in [0, 1]")
        if self.test_steps < 1 or self.eval_episodes < 1:
            raise ConfigError("test_steps and eval_episodes must be positive")
        self.delay_indices()
        self.hidden(self.policy_hidden)
        if self.critic_hidden:
            self.hidden(self.critic_hidden)

    @staticmethod
    def hidden(text: str) -> tuple[int, ...]:
        try:
            dims = tuple(int(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"bad layer list {text!r}") from None
        if not dims or min(dims) < 1:
            raise ConfigError(f"bad layer list {text!r}")
        return dims

    def delay_indices(self) -> list[int]:
        if not self.delays.strip():
            return list(range(self.delay_n))
        try:
            idx = sorted({int(v) for v in self.delays.split(",") if v.strip()})
        except ValueError:
            raise ConfigError(f"bad delay index list {self.delays!r}") from None
        if not idx or idx[0] < 0 or idx[-1] >= self.delay_n:
            raise ConfigError(f"delay indices must lie in [0, {self.delay_n - 1}]")
        return idx

    def learner(self) -> LearnerConfig:
        return LearnerConfig(
            algorithm=self.algorithm, gamma=self.gamma, lr=self.lr, xi=self.xi,
            batch_size=self.batch_size, buffer_capacity=self.buffer_capacity,
            shaping_lambda=self.shaping_lambda, policy_hidden=self.hidden(self.policy_hidden),
            critic_hidden=self.hidden(self.critic_hidden) if self.critic_hidden else None,
            eta=self.eta, noise_init=self.noise_init, noise_min=self.noise_min,
            noise_decay_steps=self.noise_decay_steps, replay_repeat=self.replay_repeat,
            iterations_per_step=self.iterations_per_step, total_iterations=self.total_iterations,
            warmup_steps=self.warmup_steps, shared_noise=self.shared_noise,
            policy_delay=self.policy_delay, target_noise=self.target_noise,
            target_noise_clip=self.target_noise_clip,
        )

    def env_config(self, noise_seed: int = 0) -> EnvConfig:
        return EnvConfig(
            eta=self.eta, beta=self.beta, lam1=self.lam1, lam2=self.lam2, v_ref=self.v_ref,
            episode_length=self.episode_length, delta=self.delta, history_s=self.history_s,
            sigma_obs=self.sigma_obs, noise_seed=noise_seed,
        )

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    # -- text form
    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            sec = f.metadata["section"]
            if not cp.has_section(sec):
                cp.add_section(sec)
            v = getattr(self, f.name)
            cp.set(sec, f.name, _format(v))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "ExperimentConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        by_name = {f.name: f for f in fields(cls)}
        values = {}
        for sec in cp.sections():
            for key, raw in cp.items(sec):
                f = by_name.get(key)
                if f is None:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                if f.metadata["section"] != sec:
                    raise ConfigError(f"key {key!r} belongs in [{f.metadata['section']}], not [{sec}]")
                values[key] = _parse(f, raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path: str, **overrides) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.from_text(text, **overrides)


def _format(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(f, raw: str):
    raw = raw.strip()
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if kind == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "float | None":
            return float(raw) if raw else None
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {f.name} ({kind})") from None
