"""Experiment configuration: YAML in, validated frozen settings out.

One YAML file drives the whole pipeline — material grid, collection
durations, training and control hyperparameters, evaluation trials, and the
goal-silhouette generation recipe.  Generated artifacts live under the
workspace directory (the ``--out`` argument) so a workspace is
self-contained and relocatable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from ..controller import ControlConfig, EstimationSchedule
from ..dpmpb import TrainingConfig
from ..simworld import MaterialParams


SCHEMA_VERSION_CONFIG = 1


class ConfigError(ValueError):
    """The configuration file is missing, malformed, or inconsistent."""


@dataclass(frozen=True)
class CollectSettings:
    seconds_random: float = 50.0
    seconds_scripted: float = 50.0
    hold_steps: int = 4
    settle_seconds: float = 2.0

    def __post_init__(self):
        if self.seconds_random < 0 or self.seconds_scripted < 0:
            raise ConfigError("collection durations must be >= 0")
        if self.seconds_random == 0 and self.seconds_scripted == 0:
            raise ConfigError("at least one collection phase needs a positive duration")
        if self.hold_steps < 1 or self.settle_seconds < 0:
            raise ConfigError("hold_steps must be >= 1 and settle_seconds >= 0")


@dataclass(frozen=True)
class AeSettings:
    epochs: int = 25
    batch_size: int = 64
    lr: float = 1e-3
    frame_stride: int = 2
    min_images: int = 200

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.frame_stride, self.min_images) < 1:
            raise ConfigError("autoencoder integers must be >= 1")
        if self.lr <= 0:
            raise ConfigError("autoencoder learning rate must be positive")


@dataclass(frozen=True)
class TargetsGenSettings:
    """Goal silhouettes are frozen per evaluation material from a scripted
    session of that same cloth, so every target is a pose the material was
    actually seen to reach."""

    seconds: float = 30.0
    spread_fractions: tuple[float, ...] = (1.0, 0.75)

    def __post_init__(self):
        if self.seconds <= 0:
            raise ConfigError("target generation needs a positive duration")
        if not self.spread_fractions:
            raise ConfigError("target generation needs at least one spread fraction")
        if any(not (0 < f <= 1.0) for f in self.spread_fractions):
            raise ConfigError("spread fractions must lie in (0, 1]")


@dataclass(frozen=True)
class IntegratedSettings:
    material: tuple[float, float] = (0.03, 0.10)
    bias_from: tuple[float, float] = (0.07, 0.15)
    seconds: float = 60.0
    target_index: int = 0

    def __post_init__(self):
        if self.seconds <= 0:
            raise ConfigError("integrated run needs a positive duration")
        if self.target_index < 0:
            raise ConfigError("target_index must be >= 0")


@dataclass(frozen=True)
class StiffnessSettings:
    material: tuple[float, float] = (0.07, 0.15)
    low_gain: float = 10.0
    target_index: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)

    def __post_init__(self):
        if self.low_gain <= 0:
            raise ConfigError("low_gain must be positive")
        if not self.seeds:
            raise ConfigError("the stiffness comparison needs at least one seed")


@dataclass(frozen=True)
class EvalSettings:
    seconds: float = 50.0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    materials: tuple[tuple[float, float], ...] = ((0.03, 0.05), (0.07, 0.15))
    held_materials: tuple[tuple[float, float], ...] = (
        (0.05, 0.05), (0.07, 0.10), (0.03, 0.15))
    estimation_seconds: float = 40.0
    integrated: IntegratedSettings = field(default_factory=IntegratedSettings)
    stiffness: StiffnessSettings = field(default_factory=StiffnessSettings)

    def __post_init__(self):
        if self.seconds <= 0 or self.estimation_seconds <= 0:
            raise ConfigError("evaluation durations must be positive")
        if not self.seeds:
            raise ConfigError("evaluation needs at least one seed")
        if not self.materials:
            raise ConfigError("evaluation needs at least one material")


@dataclass(frozen=True)
class EllipsoidSettings:
    gains: tuple[float, ...] = (10.0, 30.0, 50.0, 70.0)
    doubling_pairs: tuple[tuple[float, float], ...] = (
        (10.0, 20.0), (20.0, 40.0), (35.0, 70.0))
    theta_ref: tuple[float, float] = (0.6, -1.2)
    probe_force: float = 1.0
    n_dirs: int = 16

    def __post_init__(self):
        if len(self.gains) < 2:
            raise ConfigError("the ellipsoid sweep needs at least two gains")
        if any(hi != 2 * lo for lo, hi in self.doubling_pairs):
            raise ConfigError("doubling pairs must have hi == 2*lo")
        if self.probe_force <= 0 or self.n_dirs < 4:
            raise ConfigError("probe_force must be positive and n_dirs >= 4")


@dataclass(frozen=True)
class ExperimentConfig:
    materials: tuple[MaterialParams, ...]
    collect: CollectSettings = field(default_factory=CollectSettings)
    ae: AeSettings = field(default_factory=AeSettings)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    estimation: EstimationSchedule = field(default_factory=EstimationSchedule)
    eval: EvalSettings = field(default_factory=EvalSettings)
    targets_gen: TargetsGenSettings = field(default_factory=TargetsGenSettings)
    ellipsoid: EllipsoidSettings = field(default_factory=EllipsoidSettings)

    def __post_init__(self):
        if not self.materials:
            raise ConfigError("the material grid must be nonempty")
        tags = [m.tag for m in self.materials]
        if len(set(tags)) != len(tags):
            raise ConfigError("the material grid has duplicate entries")
        grid = {m.tag for m in self.materials}
        for what, pairs in [
            ("evaluation", self.eval.materials),
            ("held-out estimation", self.eval.held_materials),
            ("integrated-run", (self.eval.integrated.material,
                                self.eval.integrated.bias_from)),
            ("stiffness-comparison", (self.eval.stiffness.material,)),
        ]:
            for cd, cm in pairs:
                if MaterialParams(cd, cm).tag not in grid:
                    raise ConfigError(
                        f"{what} material ({cd}, {cm}) is not in the trained grid")
        n_targets = len(self.targets_gen.spread_fractions)
        for idx in (self.eval.integrated.target_index, self.eval.stiffness.target_index):
            if idx >= n_targets:
                raise ConfigError(f"target index {idx} out of range "
                                  f"for {n_targets} targets")

    def material(self, cd: float, cm: float) -> MaterialParams:
        """The grid entry matching (c_damp, c_mass); ConfigError if absent."""
        want = MaterialParams(cd, cm).tag
        for m in self.materials:
            if m.tag == want:
                return m
        raise ConfigError(f"material ({cd}, {cm}) is not in the grid")

    def target_materials(self) -> tuple[MaterialParams, ...]:
        """Every material that needs its own goal silhouettes, deduplicated."""
        seen: dict[str, MaterialParams] = {}
        for cd, cm in (*self.eval.materials, self.eval.integrated.material,
                       self.eval.stiffness.material):
            m = self.material(cd, cm)
            seen.setdefault(m.tag, m)
        return tuple(seen.values())


# ---------------------------------------------------------------------------
# YAML loading
# ---------------------------------------------------------------------------


def _build(cls, mapping, where):
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    coerced = {}
    for f in fields(cls):
        if f.name not in mapping:
            continue
        v = mapping[f.name]
        coerced[f.name] = tuple(tuple(x) if isinstance(x, list) else x for x in v) \
            if isinstance(v, list) else v
    try:
        return cls(**coerced)
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"{where}: {err}") from err


def _material_grid(section) -> tuple[MaterialParams, ...]:
    if not isinstance(section, dict):
        raise ConfigError("materials: expected a mapping with c_damp and c_mass lists")
    extra = set(section) - {"c_damp", "c_mass"}
    if extra:
        raise ConfigError(f"materials: unknown keys {sorted(extra)}")
    damps = section.get("c_damp") or []
    masses = section.get("c_mass") or []
    if not damps or not masses:
        raise ConfigError("materials: c_damp and c_mass must be nonempty lists")
    try:
        return tuple(MaterialParams(float(cd), float(cm))
                     for cd in damps for cm in masses)
    except ValueError as err:
        raise ConfigError(f"materials: {err}") from err


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment configuration."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} does not exist")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    version = doc.pop("schema_version", SCHEMA_VERSION_CONFIG)
    if version != SCHEMA_VERSION_CONFIG:
        raise ConfigError(f"{path}: config schema_version {version} unsupported "
                          f"(this build reads {SCHEMA_VERSION_CONFIG})")
    known_sections = {"materials", "collect", "autoencoder", "dynamics", "control",
                      "estimation", "evaluation", "targets_gen", "ellipsoid"}
    unknown = set(doc) - known_sections
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    if "materials" not in doc:
        raise ConfigError(f"{path}: a materials section is required")

    eval_map = dict(doc.get("evaluation") or {})
    integrated = _build(IntegratedSettings, eval_map.pop("integrated", None),
                        "evaluation.integrated")
    stiffness = _build(StiffnessSettings, eval_map.pop("stiffness", None),
                       "evaluation.stiffness")
    eval_map["integrated"] = integrated
    eval_map["stiffness"] = stiffness

    return ExperimentConfig(
        materials=_material_grid(doc["materials"]),
        collect=_build(CollectSettings, doc.get("collect"), "collect"),
        ae=_build(AeSettings, doc.get("autoencoder"), "autoencoder"),
        training=_build(TrainingConfig, doc.get("dynamics"), "dynamics"),
        control=_build(ControlConfig, doc.get("control"), "control"),
        estimation=_build(EstimationSchedule, doc.get("estimation"), "estimation"),
        eval=_build(EvalSettings, eval_map, "evaluation"),
        targets_gen=_build(TargetsGenSettings, doc.get("targets_gen"), "targets_gen"),
        ellipsoid=_build(EllipsoidSettings, doc.get("ellipsoid"), "ellipsoid"),
    )


def config_digest(cfg: ExperimentConfig) -> str:
    """Stable hash of the parsed configuration (not of the YAML text)."""
    payload = {
        "materials": [(m.c_damp, m.c_mass) for m in cfg.materials],
        "collect": asdict(cfg.collect),
        "ae": asdict(cfg.ae),
        "training": asdict(cfg.training),
        "control": asdict(cfg.control),
        "estimation": asdict(cfg.estimation),
        "eval": asdict(cfg.eval),
        "targets_gen": asdict(cfg.targets_gen),
        "ellipsoid": asdict(cfg.ellipsoid),
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
