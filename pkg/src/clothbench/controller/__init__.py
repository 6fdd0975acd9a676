"""Receding-horizon cloth control through the learned dynamics model."""

from .core import (
    ControlConfig,
    ControlSequence,
    OptimizationDivergedError,
    OptimizeResult,
    PeriodicMask,
    control_loss,
    gamma_schedule,
    mask_shift,
    optimize,
    warm_start,
)
from .loop import (
    ControlAbortedError,
    ControlTelemetry,
    EstimationSchedule,
    SimPlant,
    TickRecord,
    control_loop,
    integrated_loop,
    latent_encoder,
    random_loop,
)

__all__ = [
    "ControlAbortedError",
    "ControlConfig",
    "ControlSequence",
    "ControlTelemetry",
    "EstimationSchedule",
    "OptimizationDivergedError",
    "OptimizeResult",
    "PeriodicMask",
    "SimPlant",
    "TickRecord",
    "control_loss",
    "control_loop",
    "gamma_schedule",
    "integrated_loop",
    "latent_encoder",
    "mask_shift",
    "optimize",
    "random_loop",
    "warm_start",
]
