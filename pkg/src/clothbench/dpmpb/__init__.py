"""Recurrent one-step dynamics model with per-trial bias inputs.

The network maps (state, command, bias) to the predicted next state
through fully-connected layers and two stacked LSTM cells.  Training
fits the weights and one small bias vector per trial simultaneously,
so inter-trial differences (cloth material) self-organize into the bias
space; online estimation later adapts only the bias against fresh data
with the weights frozen.
"""

from .model import (
    Episode,
    NormStats,
    DpmpbModel,
    compute_norm_stats,
    forward_step,
    load_dynamics_model,
    rollout,
    save_dynamics_model,
    weights_digest,
    zero_hidden,
)
from .training import (
    EpisodeTooShortError,
    TrainingConfig,
    TrainingDivergedError,
    estimate_pb_online,
    train,
)

__all__ = [
    "DpmpbModel",
    "Episode",
    "EpisodeTooShortError",
    "NormStats",
    "TrainingConfig",
    "TrainingDivergedError",
    "compute_norm_stats",
    "estimate_pb_online",
    "forward_step",
    "load_dynamics_model",
    "rollout",
    "save_dynamics_model",
    "train",
    "weights_digest",
    "zero_hidden",
]
