from .agents import ALGORITHMS, MADDPG, MATD3, MPNRS, Ensemble, LearnerConfig, NoiseSchedule, td_target
from .buffer import Batch, ReplayBuffer
from .nn import Adam, Mlp, soft_update
from .training import TrainResult, train

__all__ = [
    "ALGORITHMS", "MADDPG", "MATD3", "MPNRS", "Adam", "Batch", "Ensemble", "LearnerConfig",
    "Mlp", "NoiseSchedule", "ReplayBuffer", "TrainResult", "soft_update", "td_target", "train",
]
