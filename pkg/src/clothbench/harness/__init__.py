"""Experiment harness: dataset layout, configuration, pipeline, live service.

The harness turns the lower layers (simulated world, perception, dynamics
model, controller) into a reproducible workbench: a versioned on-disk run
format, a validated YAML experiment configuration, one orchestration
function per pipeline stage, a WebSocket teleoperation service, and the
``clothbench`` command-line entry point that ties them together.
"""

from .config import (
    AeSettings,
    CollectSettings,
    ConfigError,
    EllipsoidSettings,
    EvalSettings,
    ExperimentConfig,
    IntegratedSettings,
    StiffnessSettings,
    TargetsGenSettings,
    config_digest,
    load_config,
)
from .rundir import (
    IMAGE_SHAPE,
    SCHEMA_VERSION,
    STEP_COLUMNS,
    EpisodeData,
    RunDirectory,
    RunDirectoryError,
    pgm_bytes,
    read_pgm,
    write_pgm,
)
from .pipeline import (
    MissingPrerequisiteError,
    UsageError,
    Workspace,
    run_analyze,
    run_collect,
    run_control,
    run_ellipsoid,
    run_estimate_pb,
    run_integrated,
    run_make_targets,
    run_train_ae,
    run_train_model,
)
from .cli import main

__all__ = [
    "AeSettings",
    "CollectSettings",
    "ConfigError",
    "EllipsoidSettings",
    "EvalSettings",
    "ExperimentConfig",
    "IntegratedSettings",
    "StiffnessSettings",
    "TargetsGenSettings",
    "config_digest",
    "load_config",
    "IMAGE_SHAPE",
    "SCHEMA_VERSION",
    "STEP_COLUMNS",
    "EpisodeData",
    "RunDirectory",
    "RunDirectoryError",
    "pgm_bytes",
    "read_pgm",
    "write_pgm",
    "MissingPrerequisiteError",
    "UsageError",
    "Workspace",
    "run_analyze",
    "run_collect",
    "run_control",
    "run_ellipsoid",
    "run_estimate_pb",
    "run_integrated",
    "run_make_targets",
    "run_train_ae",
    "run_train_model",
    "main",
]
