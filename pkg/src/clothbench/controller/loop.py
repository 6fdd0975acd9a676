"""Live control loops: plant adapter, telemetry, and the 5 Hz tick cycle.

Each tick observes the plant, encodes the silhouette to a latent vector,
advances the live recurrent state with the previously executed step, runs the
command optimization, and sends the first optimized command.  The integrated
variant interleaves frozen-weight bias estimation on the accumulated episode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..dpmpb import Episode, estimate_pb_online, forward_step, zero_hidden
from ..perception import encode
from ..sensorimotor import K_REF, LATENT, assemble_command, assemble_state, command_bounds
from ..simworld import ServoCommand, rasterize
from ..simworld.policy import random_policy
from ..tensor import ContractError
from .core import ControlConfig, ControlSequence, PeriodicMask, mask_shift, optimize

__all__ = [
    "ControlAbortedError",
    "ControlTelemetry",
    "EstimationSchedule",
    "SimPlant",
    "TickRecord",
    "control_loop",
    "integrated_loop",
    "latent_encoder",
    "random_loop",
]


class ControlAbortedError(RuntimeError):
    """Plant fault mid-run; carries the telemetry gathered so far."""

    def __init__(self, msg: str, telemetry: "ControlTelemetry"):
        super().__init__(msg)
        self.telemetry = telemetry


# ---------------------------------------------------------------------------
# Plant adapter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlantObservation:
    image: np.ndarray       # (96, 128) binary silhouette
    theta: np.ndarray       # (2,)
    theta_dot: np.ndarray   # (2,)
    t: float


class SimPlant:
    """Steps one simulated world under raw (3,) commands at the 5 Hz tick."""

    def __init__(self, world, material, state):
        self.world = world
        self.material = material
        self.state = state

    @classmethod
    def hanging(cls, world, material, theta=None, settle_s: float = 2.0):
        """World settled under a held pose so the cloth hangs at rest."""
        state = world.initial_state(theta)
        hold = ServoCommand((float(state.theta[0]), float(state.theta[1])),
                            0.5 * sum(world.arm.k_ref_range))
        state = world.settle(state, hold, material, duration=settle_s)
        return cls(world, material, state)

    def command_bounds(self):
        return command_bounds(self.world.arm)

    def observe(self) -> PlantObservation:
        return PlantObservation(
            image=rasterize(self.world.camera, self.state.x),
            theta=self.state.theta.copy(),
            theta_dot=self.state.theta_dot.copy(),
            t=float(self.state.t),
        )

    def step(self, u_raw) -> None:
        u = np.asarray(u_raw, dtype=np.float64).ravel()
        cmd = ServoCommand((float(u[0]), float(u[1])), float(u[K_REF]))
        self.state = self.world.step(self.state, cmd, self.material)


def latent_encoder(ae):
    """Encoder callable for the loops, closing over a trained autoencoder."""
    return lambda image: encode(ae, image)


# ---------------------------------------------------------------------------
# Telemetry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TickRecord:
    tick: int
    time: float
    latent_err: float   # ‖z_ref − z_t‖₂ in raw latent units, pre-step
    loss: float         # predicted loss of the accepted sequence (nan: no optimizer)
    gamma: float        # accepted step size of the final iteration (nan: no optimizer)
    u_raw: np.ndarray   # executed raw command (3,)


@dataclass
class ControlTelemetry:
    records: list = field(default_factory=list)
    states_raw: list = field(default_factory=list)    # executed (7,) per tick
    commands_raw: list = field(default_factory=list)  # executed (3,) per tick

    def append(self, record: TickRecord, s_raw: np.ndarray) -> None:
        self.records.append(record)
        self.states_raw.append(np.asarray(s_raw, dtype=np.float64))
        self.commands_raw.append(np.asarray(record.u_raw, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def latent_errors(self) -> np.ndarray:
        return np.array([r.latent_err for r in self.records])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_episode(self, material_tag: str = "live", trial_id: int = 0,
                   upto: int | None = None) -> Episode:
        n = len(self.records) if upto is None else upto
        return Episode.from_arrays(material_tag, trial_id,
                                   np.stack(self.states_raw[:n]),
                                   np.stack(self.commands_raw[:n]))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tick", "time_s", "latent_err", "loss", "gamma",
                             "theta_ref_0", "theta_ref_1", "k_ref"])
            for r in self.records:
                writer.writerow([r.tick, f"{r.time:.6f}"]
                                + [repr(float(v)) for v in
                                   (r.latent_err, r.loss, r.gamma,
                                    r.u_raw[0], r.u_raw[1], r.u_raw[2])])


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimationSchedule:
    """Cadence and recipe of in-the-loop bias estimation."""

    every_ticks: int = 25
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    n_expand: int = 30

    def __post_init__(self):
        if min(self.every_ticks, self.epochs, self.n_expand) < 1 or self.lr <= 0:
            raise ContractError("estimation schedule values must be positive")


def _normalize_latent(stats, z: np.ndarray) -> np.ndarray:
    return (z - stats.s_mean[LATENT]) / stats.s_std[LATENT]


def _run_loop(plant, encoder, model, p_init, z_ref, cfg: ControlConfig, n_ticks: int,
              telemetry_path=None, estimation: EstimationSchedule | None = None):
    stats = model.stats
    if stats is None:
        raise ContractError("model has no normalization statistics; train it first")
    if n_ticks < 1:
        raise ContractError("n_ticks must be >= 1")
    p = np.asarray(p_init, dtype=np.float64).ravel()
    z_ref = np.asarray(z_ref, dtype=np.float64).ravel()
    u_lo_raw, u_hi_raw = plant.command_bounds()
    u_lo = stats.normalize_command(u_lo_raw)
    u_hi = stats.normalize_command(u_hi_raw)
    fixed_k_n = None
    if cfg.fixed_k_ref is not None:
        fixed_k_n = float((cfg.fixed_k_ref - stats.u_mean[K_REF]) / stats.u_std[K_REF])
    z_ref_n = _normalize_latent(stats, z_ref)

    obs0 = plant.observe()
    hold_k = cfg.fixed_k_ref if cfg.fixed_k_ref is not None \
        else 0.5 * (u_lo_raw[K_REF] + u_hi_raw[K_REF])
    hold_n = stats.normalize_command(assemble_command(obs0.theta, hold_k))
    u_prev = ControlSequence(np.repeat(np.clip(hold_n, u_lo, u_hi)[None, :],
                                       cfg.n_seq, axis=0))

    mask = PeriodicMask.for_tick(0, cfg.n_seq, cfg.n_periodic)
    live_hidden = zero_hidden(model)
    telemetry = ControlTelemetry()
    p_history = [(0, p.copy())]
    prev_exec = None  # (s_n, u_n) of the last executed tick

    for tick in range(n_ticks):
        obs = plant.observe()
        z = encoder(obs.image)
        s_raw = assemble_state(z, obs.theta, obs.theta_dot)
        s_n = stats.normalize_state(s_raw)
        if prev_exec is not None:
            _, live_hidden = forward_step(model, prev_exec[0], prev_exec[1], p, live_hidden)
        if (estimation is not None and tick > 0
                and tick % estimation.every_ticks == 0
                and len(telemetry) >= estimation.n_expand + 1):
            episode = telemetry.to_episode()
            traj = estimate_pb_online(model, p, episode, lr=estimation.lr,
                                      momentum=estimation.momentum,
                                      epochs=estimation.epochs,
                                      n_expand=estimation.n_expand)
            p = traj[-1]
            p_history.append((tick, p.copy()))
        result = optimize(model, p, live_hidden, s_n, z_ref_n, u_prev, mask, cfg,
                          u_lo=u_lo, u_hi=u_hi, fixed_k_n=fixed_k_n)
        u0_n = result.sequence.u_seq[0]
        u_raw = np.clip(stats.denormalize_command(u0_n), u_lo_raw, u_hi_raw)
        record = TickRecord(tick, obs.t, float(np.linalg.norm(z_ref - z)),
                            result.loss, float(result.gammas[-1]), u_raw)
        try:
            plant.step(u_raw)
        except Exception as err:
            if telemetry_path is not None:
                telemetry.write_csv(telemetry_path)
            raise ControlAbortedError(f"plant fault at tick {tick}: {err}",
                                      telemetry) from err
        telemetry.append(record, s_raw)
        prev_exec = (s_n, u0_n)
        u_prev = result.sequence
        mask = mask_shift(mask)

    if telemetry_path is not None:
        telemetry.write_csv(telemetry_path)
    return telemetry, p_history


def control_loop(plant, encoder, model, p, z_ref, cfg: ControlConfig, n_ticks: int,
                 telemetry_path=None) -> ControlTelemetry:
    """Run the optimizer-driven loop for n_ticks; returns telemetry."""
    telemetry, _ = _run_loop(plant, encoder, model, p, z_ref, cfg, n_ticks,
                             telemetry_path=telemetry_path, estimation=None)
    return telemetry


def integrated_loop(plant, encoder, model, p_init, z_ref, cfg: ControlConfig,
                    n_ticks: int, schedule: EstimationSchedule | None = None,
                    telemetry_path=None):
    """Control with interleaved bias estimation; returns (p history, telemetry).

    The p history is a list of (tick, p) pairs starting with the initial bias;
    the network weights are never touched (estimation is bias-only).
    """
    schedule = EstimationSchedule() if schedule is None else schedule
    telemetry, p_history = _run_loop(plant, encoder, model, p_init, z_ref, cfg,
                                     n_ticks, telemetry_path=telemetry_path,
                                     estimation=schedule)
    return p_history, telemetry


def random_loop(plant, encoder, z_ref, n_ticks: int, seed: int,
                telemetry_path=None, stiffness: bool = True,
                fixed_k=None) -> ControlTelemetry:
    """Baseline: the random collection policy with control-style telemetry."""
    z_ref = np.asarray(z_ref, dtype=np.float64).ravel()
    commands = random_policy(plant.world, seed, stiffness=stiffness, fixed_k=fixed_k)
    telemetry = ControlTelemetry()
    for tick in range(n_ticks):
        obs = plant.observe()
        z = encoder(obs.image)
        s_raw = assemble_state(z, obs.theta, obs.theta_dot)
        cmd = next(commands)
        u_raw = cmd.as_array()
        record = TickRecord(tick, obs.t, float(np.linalg.norm(z_ref - z)),
                            float("nan"), float("nan"), u_raw)
        try:
            plant.step(u_raw)
        except Exception as err:
            if telemetry_path is not None:
                telemetry.write_csv(telemetry_path)
            raise ControlAbortedError(f"plant fault at tick {tick}: {err}",
                                      telemetry) from err
        telemetry.append(record, s_raw)
    if telemetry_path is not None:
        telemetry.write_csv(telemetry_path)
    return telemetry
