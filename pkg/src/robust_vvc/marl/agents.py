"""Actor-critic ensembles: MPNRS-MATD3 and the MATD3 / MADDPG baselines.

Every agent owns its policy heads and its critics. Critics score the global
state together with the joint action of all agents. MPNRS-MATD3 keeps one
policy head per predicted sample (upper, lower, midpoint); the baselines keep a
single head that reads the midpoint sample and whose action is reused for all
three samples.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .buffer import Batch
from .nn import Adam, Mlp

MPNRS = "mpnrs-matd3"
MATD3 = "matd3"
MADDPG = "maddpg"
ALGORITHMS = (MPNRS, MATD3, MADDPG)
MEDIAN = 2
CHECKPOINT_VERSION = 1


@dataclass
class LearnerConfig:
    algorithm: str = MPNRS
    gamma: float = 0.9
    lr: float = 5e-4
    xi: float = 0.01
    batch_size: int = 32
    buffer_capacity: int = 10_000
    shaping_lambda: float = 1.0
    policy_hidden: tuple = (256, 256)
    critic_hidden: tuple | None = None  # None: (2d, d) with d the agent's observation size
    eta: float = 0.8
    noise_init: float = 0.1
    noise_min: float = 0.02
    noise_decay_steps: int = 200
    replay_repeat: int = 1
    warmup_steps: int = 0  # uniform random actions and no updates for this many env steps
    shared_noise: bool = False  # one exploration draw per agent, reused by all heads
    iterations_per_step: int = 1
    total_iterations: int = 4000  # gradient iterations per training call; 0 means unbounded
    policy_delay: int = 1
    target_noise: float = 0.0
    target_noise_clip: float = 0.5
    policy_out_gain: float = 0.01

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        self.policy_hidden = tuple(int(h) for h in self.policy_hidden)
        if self.critic_hidden is not None:
            self.critic_hidden = tuple(int(h) for h in self.critic_hidden)

    @property
    def heads(self) -> tuple[int, ...]:
        """Sample index read by each policy head."""
        return (0, 1, 2) if self.algorithm == MPNRS else (MEDIAN,)

    @property
    def twin(self) -> bool:
        return self.algorithm != MADDPG

    @property
    def shaping(self) -> float:
        return self.shaping_lambda if self.algorithm == MPNRS else 0.0


@dataclass
class NoiseSchedule:
    """Exploration std decaying linearly from ``initial`` to ``floor``."""

    initial: float = 0.1
    floor: float = 0.02
    decay_steps: int = 200
    step_count: int = 0

    @property
    def value(self) -> float:
        if self.decay_steps <= 0:
            return self.floor
        frac = min(1.0, self.step_count / self.decay_steps)
        return max(self.floor, self.initial - (self.initial - self.floor) * frac)

    def step(self) -> float:
        self.step_count += 1
        return self.value


def td_target(r, F, lam: float, gamma: float, q1_next, q2_next=None):
    """``r + lam * F + gamma * min(Q1', Q2')``; with a single critic, ``r + lam * F + gamma * Q'``."""
    q = q1_next if q2_next is None else np.minimum(q1_next, q2_next)
    return r + lam * F + gamma * q


@dataclass
class UpdateStats:
    critic_loss: list = field(default_factory=list)
    actor_q: list = field(default_factory=list)


def pack(nets) -> np.ndarray:
    """Move the parameters of ``nets`` into one shared contiguous vector."""
    buf = np.empty(sum(n.n_params for n in nets))
    off = 0
    for n in nets:
        n.rebind(buf[off: off + n.n_params])
        off += n.n_params
    return buf


class Agent:
    """Policy heads and critics of one region.

    All heads live in one parameter vector and both critics in another, so a
    single Adam step per group updates every head (or critic) at once. Adam is
    elementwise, so this equals stepping each network with its own optimizer.
    """

    def __init__(self, obs_dim: int, act_index, state_dim: int, joint_dim: int, cfg: LearnerConfig,
                 rng: np.random.Generator | None):
        self.obs_dim = obs_dim
        self.act_index = np.asarray(act_index, dtype=int)
        self.act_dim = len(self.act_index)
        self.state_dim = state_dim
        self.joint_dim = joint_dim
        self.cfg = cfg
        self.head_samples = cfg.heads
        pdims = [obs_dim, *cfg.policy_hidden, self.act_dim]
        heads = [Mlp(pdims, rng, squash=True, scale=cfg.eta, out_gain=cfg.policy_out_gain)
                 for _ in self.head_samples]
        d = 3 * obs_dim
        hidden = cfg.critic_hidden if cfg.critic_hidden is not None else (2 * d, d)
        cdims = [state_dim + joint_dim, *hidden, 1]
        q1 = Mlp(cdims, rng)
        q2 = Mlp(cdims, rng) if cfg.twin else None
        self.install(heads, q1, q2)

    def install(self, heads, q1, q2) -> None:
        """Adopt the given online networks; targets become copies and optimizers restart."""
        self.heads, self.q1, self.q2 = list(heads), q1, q2
        self.policy_flat = pack(self.heads)
        self.critic_flat = pack(self.critics)
        self.opt_policy = Adam(self.policy_flat, self.cfg.lr)
        self.opt_critic = Adam(self.critic_flat, self.cfg.lr)
        self.sync_targets()

    @property
    def critics(self) -> list[Mlp]:
        return [q for q in (self.q1, self.q2) if q is not None]

    def sync_targets(self) -> None:
        self.target_heads = [h.copy() for h in self.heads]
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy() if self.q2 is not None else None
        self.target_policy_flat = pack(self.target_heads)
        self.target_critic_flat = pack([q for q in (self.q1_target, self.q2_target) if q is not None])

    @property
    def bootstrap_head(self) -> Mlp:
        """Target head fed the next midpoint observation when forming TD targets."""
        return self.target_heads[self.head_samples.index(MEDIAN)]

    def critic_gradient(self, x: np.ndarray, y: np.ndarray):
        """Gradient of each critic's mean squared TD error, flat over all critics, plus the losses."""
        grad = np.empty_like(self.critic_flat)
        losses, off = [], 0
        for q in self.critics:
            out, acts = q.forward(x)
            res = out[:, 0] - y
            losses.append(float(np.mean(res * res)))
            q.backward(acts, (2.0 / len(y)) * res[:, None], need_input=False,
                       out=grad[off: off + q.n_params])
            off += q.n_params
        return grad, losses

    def critic_update(self, x: np.ndarray, y: np.ndarray) -> list[float]:
        """One Adam step on the mean squared TD error of every critic; returns the pre-step losses."""
        grad, losses = self.critic_gradient(x, y)
        self.opt_critic.step(grad)
        return losses

    def actor_gradient(self, batch: Batch, obs_slice: slice, heads=None):
        """Gradient of ``-mean Q1`` for the selected heads, flat over all heads.

        For head ``h`` this agent's slot of the stored joint action is replaced
        by the head's output on its own sample's observation; heads not
        selected get a zero gradient.
        """
        grad = np.zeros_like(self.policy_flat)
        q_means, off = [], 0
        for h, head in enumerate(self.heads):
            if heads is None or h in heads:
                o = batch.obs[:, self.head_samples[h], obs_slice]
                a, acts_pi = head.forward(o)
                joint = batch.action.copy()
                joint[:, self.act_index] = a
                qv, acts_q = self.q1.forward(np.concatenate([batch.state, joint], axis=1))
                n = len(qv)
                _, gx = self.q1.backward(acts_q, np.full((n, 1), -1.0 / n))
                ga = gx[:, self.state_dim + self.act_index]
                head.backward(acts_pi, ga, need_input=False, out=grad[off: off + head.n_params])
                q_means.append(float(qv.mean()))
            off += head.n_params
        return grad, q_means

    def actor_update(self, batch: Batch, obs_slice: slice) -> list[float]:
        """Policy-gradient step for every head on a frozen critic; returns batch-mean Q1 per head."""
        grad, q_means = self.actor_gradient(batch, obs_slice)
        self.opt_policy.step(grad)
        return q_means

    def soft_update_targets(self, xi: float) -> None:
        for online, target in ((self.policy_flat, self.target_policy_flat),
                               (self.critic_flat, self.target_critic_flat)):
            target *= 1.0 - xi
            target += xi * online


class Ensemble:
    """All agents of one trained controller (one delay horizon)."""

    def __init__(self, obs_dims, act_indices, state_dim: int, cfg: LearnerConfig,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.obs_dims = [int(d) for d in obs_dims]
        self.act_indices = [np.asarray(ix, dtype=int) for ix in act_indices]
        self.joint_dim = int(sum(len(ix) for ix in self.act_indices))
        self.state_dim = int(state_dim)
        offs = np.concatenate([[0], np.cumsum(self.obs_dims)])
        self.obs_slices = [slice(int(offs[m]), int(offs[m + 1])) for m in range(len(self.obs_dims))]
        self.agents = [Agent(d, ix, self.state_dim, self.joint_dim, cfg, rng)
                       for d, ix in zip(self.obs_dims, self.act_indices)]
        self.iterations = 0

    @classmethod
    def for_env(cls, env, cfg: LearnerConfig, rng: np.random.Generator | None = None) -> "Ensemble":
        return cls([env.obs_dim(m) for m in range(env.n_agents)], env.region_inv, env.state_dim, cfg, rng)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def stack_obs(self, obs) -> np.ndarray:
        """Per-agent (3, O_m) arrays -> (3, sum O_m)."""
        return np.concatenate([np.asarray(o, dtype=float) for o in obs], axis=1)

    def select_actions(self, obs, tau: float = 0.0, rng: np.random.Generator | None = None) -> list[np.ndarray]:
        """Per agent a (3, |D_m|) ratio array: policy output plus N(0, tau^2), clipped to +-eta."""
        eta = self.cfg.eta
        out = []
        for agent, o in zip(self.agents, obs):
            o = np.asarray(o, dtype=float)
            a = np.empty((3, agent.act_dim))
            if len(agent.heads) == 3:
                for j, head in enumerate(agent.heads):
                    a[j] = head(o[j])
            else:
                a[:] = agent.heads[0](o[MEDIAN])
            if tau > 0:
                if rng is None:
                    raise ValueError("exploration noise needs an rng")
                if len(agent.heads) == 3 and not self.cfg.shared_noise:
                    a = a + rng.normal(0.0, tau, size=a.shape)
                elif len(agent.heads) == 3:
                    a = a + rng.normal(0.0, tau, size=agent.act_dim)
                else:
                    a[:] = a[0] + rng.normal(0.0, tau, size=agent.act_dim)
            out.append(np.clip(a, -eta, eta))
        return out

    def random_actions(self, rng: np.random.Generator) -> list[np.ndarray]:
        """Uniform ratios in [-eta, eta]; one per sample for multi-head agents, else replicated."""
        eta = self.cfg.eta
        out = []
        for agent in self.agents:
            if len(agent.heads) == 3:
                out.append(rng.uniform(-eta, eta, size=(3, agent.act_dim)))
            else:
                out.append(np.repeat(rng.uniform(-eta, eta, size=(1, agent.act_dim)), 3, axis=0))
        return out

    def bootstrap_actions(self, next_obs: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        n = next_obs.shape[0]
        A = np.zeros((n, self.joint_dim))
        for agent, sl in zip(self.agents, self.obs_slices):
            A[:, agent.act_index] = agent.bootstrap_head(next_obs[:, MEDIAN, sl])
        if self.cfg.target_noise > 0 and rng is not None:
            c = self.cfg.target_noise_clip
            A = A + np.clip(rng.normal(0.0, self.cfg.target_noise, size=A.shape), -c, c)
            A = np.clip(A, -self.cfg.eta, self.cfg.eta)
        return A

    def targets(self, batch: Batch, A_next: np.ndarray) -> list[np.ndarray]:
        x_next = np.concatenate([batch.next_state, A_next], axis=1)
        ys = []
        for agent in self.agents:
            q1n = agent.q1_target(x_next)[:, 0]
            q2n = agent.q2_target(x_next)[:, 0] if agent.q2_target is not None else None
            ys.append(td_target(batch.reward, batch.shaping, self.cfg.shaping, self.cfg.gamma, q1n, q2n))
        return ys

    def update(self, batch: Batch, rng: np.random.Generator | None = None) -> UpdateStats:
        """One iteration of the centralized training procedure for every agent."""
        stats = UpdateStats()
        ys = self.targets(batch, self.bootstrap_actions(batch.next_obs, rng))
        x = np.concatenate([batch.state, batch.action], axis=1)
        do_actor = self.iterations % max(1, self.cfg.policy_delay) == 0
        for agent, sl, y in zip(self.agents, self.obs_slices, ys):
            stats.critic_loss.append(agent.critic_update(x, y))
            if do_actor:
                stats.actor_q.append(agent.actor_update(batch, sl))
                agent.soft_update_targets(self.cfg.xi)
        self.iterations += 1
        return stats

    # -- persistence
    def to_dict(self) -> dict:
        """Online networks only; targets are re-synchronized from them on load."""
        cfg = asdict(self.cfg)
        cfg["policy_hidden"] = list(self.cfg.policy_hidden)
        if self.cfg.critic_hidden is not None:
            cfg["critic_hidden"] = list(self.cfg.critic_hidden)
        return {
            "version": CHECKPOINT_VERSION,
            "config": cfg,
            "obs_dims": self.obs_dims,
            "act_indices": [ix.tolist() for ix in self.act_indices],
            "state_dim": self.state_dim,
            "iterations": self.iterations,
            "agents": [
                {
                    "heads": [h.to_dict() for h in a.heads],
                    "q1": a.q1.to_dict(),
                    "q2": a.q2.to_dict() if a.q2 is not None else None,
                }
                for a in self.agents
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Ensemble":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        cfg = LearnerConfig(**d["config"])
        ens = cls(d["obs_dims"], d["act_indices"], d["state_dim"], cfg, None)
        ens.iterations = int(d.get("iterations", 0))
        if len(d["agents"]) != ens.n_agents:
            raise ValueError("checkpoint agent count does not match its dimensions")
        for agent, ad in zip(ens.agents, d["agents"]):
            agent.install([Mlp.from_dict(h) for h in ad["heads"]], Mlp.from_dict(ad["q1"]),
                          Mlp.from_dict(ad["q2"]) if ad["q2"] is not None else None)
        return ens
