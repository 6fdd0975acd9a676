"""Receding-horizon command optimization through the learned dynamics model.

Each control tick shifts the previous command sequence one step left
(duplicating the last entry), rolls the model out over the horizon, backprops
the masked latent-target loss to the command sequence, and line-searches a
log-spaced batch of step sizes along the normalized gradient.  The incumbent
sequence always competes with the candidates, so an iteration can never make
the predicted loss worse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..sensorimotor import JOINT_VEL, K_REF, LATENT, LATENT_DIM, STATE_DIM
from ..tensor import (
    ContractError,
    NonFiniteError,
    Tape,
    Tensor,
    backward,
    concat,
    l2_norm,
    mul,
    scale,
    slice_,
    sub,
)

__all__ = [
    "ControlConfig",
    "ControlSequence",
    "OptimizationDivergedError",
    "OptimizeResult",
    "PeriodicMask",
    "control_loss",
    "gamma_schedule",
    "mask_shift",
    "optimize",
    "warm_start",
]


class OptimizationDivergedError(RuntimeError):
    """Every candidate rollout produced non-finite predictions."""


# ---------------------------------------------------------------------------
# Configuration and sequence containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlConfig:
    """Knobs of the per-tick optimization.

    ``fixed_k_ref`` locks the gain channel to a raw value (the optimizer
    then only shapes the joint targets); ``None`` leaves it free.
    """

    n_seq: int = 8
    n_batch: int = 30
    gamma_max: float = 1.0
    n_iter: int = 3
    w_loss: float = 0.001
    n_periodic: int = 8
    gamma_min_ratio: float = 1e-3
    fixed_k_ref: float | None = None

    def __post_init__(self):
        if min(self.n_seq, self.n_batch, self.n_iter, self.n_periodic) < 1:
            raise ContractError("n_seq, n_batch, n_iter, n_periodic must be >= 1")
        if not (self.gamma_max > 0 and 0 < self.gamma_min_ratio <= 1):
            raise ContractError("gamma_max must be > 0 and gamma_min_ratio in (0, 1]")
        if self.w_loss < 0:
            raise ContractError("w_loss must be >= 0")


@dataclass(frozen=True)
class ControlSequence:
    """A horizon of normalized commands, shape (n_seq, n_u)."""

    u_seq: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u_seq, dtype=np.float64)
        object.__setattr__(self, "u_seq", u)
        if u.ndim != 2 or u.shape[0] < 1:
            raise ContractError(f"command sequence must be (n_seq, n_u), got {u.shape}")
        if not np.isfinite(u).all():
            raise ContractError("command sequence must be finite")

    def __len__(self) -> int:
        return self.u_seq.shape[0]


def warm_start(prev: ControlSequence) -> ControlSequence:
    """Shift one step left and duplicate the last entry."""
    u = prev.u_seq
    return ControlSequence(np.vstack([u[1:], u[-1:]]))


# ---------------------------------------------------------------------------
# Periodic target mask
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicMask:
    """0/1 horizon mask whose ones sit at absolute target ticks.

    Horizon position j of the mask built at tick t covers absolute tick
    t+1+j (the first prediction lands one tick ahead); targets are the
    ticks divisible by n_periodic.
    """

    values: np.ndarray
    tick: int
    n_periodic: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 1 or v.shape[0] < 1:
            raise ContractError(f"mask must be a 1-d vector, got shape {v.shape}")
        if not np.all((v == 0.0) | (v == 1.0)):
            raise ContractError("mask entries must be 0 or 1")
        if self.n_periodic < 1:
            raise ContractError("n_periodic must be >= 1")

    @classmethod
    def for_tick(cls, tick: int, n_seq: int, n_periodic: int) -> "PeriodicMask":
        j = np.arange(n_seq)
        values = ((tick + 1 + j) % n_periodic == 0).astype(np.float64)
        return cls(values, int(tick), int(n_periodic))


def mask_shift(mask: PeriodicMask) -> PeriodicMask:
    """Advance the mask one tick: left shift, new right entry per schedule."""
    n_seq = mask.values.shape[0]
    incoming_abs_tick = mask.tick + 1 + n_seq  # absolute tick of the new slot
    new_values = np.empty_like(mask.values)
    new_values[:-1] = mask.values[1:]
    new_values[-1] = 1.0 if incoming_abs_tick % mask.n_periodic == 0 else 0.0
    return PeriodicMask(new_values, mask.tick + 1, mask.n_periodic)


def _mask_values(mask, n_seq: int) -> np.ndarray:
    v = mask.values if isinstance(mask, PeriodicMask) else np.asarray(mask, dtype=np.float64)
    if v.shape != (n_seq,):
        raise ContractError(f"mask length {v.shape} does not match horizon {n_seq}")
    if not np.all((v == 0.0) | (v == 1.0)):
        raise ContractError("mask entries must be 0 or 1")
    return v


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def _check_ref(s_ref_seq) -> np.ndarray:
    ref = np.asarray(s_ref_seq, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[1] != STATE_DIM:
        raise ContractError(f"reference sequence must be (n_seq, {STATE_DIM}), got {ref.shape}")
    return ref


def control_loss(s_ref_seq, s_pred_seq, mask, w_loss: float):
    """Masked latent tracking error plus velocity regularizer.

    ``‖m ⊗ (z_ref − z_pred)‖₂ + w_loss · ‖θ̇_pred‖₂`` over the horizon.
    With a Tensor prediction the result is a scalar Tensor (differentiable);
    with an ndarray it is a float.
    """
    ref = _check_ref(s_ref_seq)
    n_seq = ref.shape[0]
    m = _mask_values(mask, n_seq)
    if isinstance(s_pred_seq, Tensor):
        if s_pred_seq.shape != (n_seq, STATE_DIM):
            raise ContractError(
                f"prediction shape {s_pred_seq.shape} != reference {(n_seq, STATE_DIM)}")
        z_pred = slice_(s_pred_seq, (slice(None), LATENT))
        diff = mul(sub(Tensor(ref[:, LATENT]), z_pred), Tensor(m[:, None]))
        vel = slice_(s_pred_seq, (slice(None), JOINT_VEL))
        return l2_norm(diff) + scale(l2_norm(vel), w_loss)
    pred = np.asarray(s_pred_seq, dtype=np.float64)
    if pred.shape != (n_seq, STATE_DIM):
        raise ContractError(f"prediction shape {pred.shape} != reference {(n_seq, STATE_DIM)}")
    return float(_loss_batch(ref, pred[None], m, w_loss)[0])


def _loss_batch(ref: np.ndarray, pred_batch: np.ndarray, m: np.ndarray,
                w_loss: float) -> np.ndarray:
    """Vectorized loss over a (B, n_seq, STATE_DIM) candidate batch."""
    diff = (ref[None, :, LATENT] - pred_batch[:, :, LATENT]) * m[None, :, None]
    track = np.sqrt(np.sum(diff * diff, axis=(1, 2)))
    vel = pred_batch[:, :, JOINT_VEL]
    reg = w_loss * np.sqrt(np.sum(vel * vel, axis=(1, 2)))
    return track + reg


# ---------------------------------------------------------------------------
# Step-size schedule
# ---------------------------------------------------------------------------


def gamma_schedule(n_batch: int, gamma_max: float, gamma_min_ratio: float = 1e-3) -> np.ndarray:
    """Log-spaced step sizes from gamma_max·ratio up to gamma_max inclusive."""
    if n_batch < 1 or gamma_max <= 0 or not 0 < gamma_min_ratio <= 1:
        raise ContractError("need n_batch >= 1, gamma_max > 0, ratio in (0, 1]")
    if n_batch == 1:
        return np.array([gamma_max])
    return np.geomspace(gamma_max * gamma_min_ratio, gamma_max, n_batch)


# ---------------------------------------------------------------------------
# Rollouts through the model
# ---------------------------------------------------------------------------


def _branch_hidden(hidden, batch: int):
    """Copy a ((h,c),(h,c)) snapshot, tiled to the candidate batch size."""
    return tuple(
        (Tensor(np.repeat(h.data, batch, axis=0)), Tensor(np.repeat(c.data, batch, axis=0)))
        for h, c in hidden)


def _rollout_taped(model, p_row: Tensor, hidden, s_t: np.ndarray, u_t: Tensor) -> Tensor:
    """Differentiable free-running rollout; returns (n_seq, n_s) predictions."""
    n_seq = u_t.shape[0]
    h = _branch_hidden(hidden, 1)
    s = Tensor(s_t[None, :])
    outs = []
    for j in range(n_seq):
        uj = slice_(u_t, (slice(j, j + 1), slice(None)))
        x = concat([s, uj, p_row], axis=1)
        out, h = model.step_batch(x, h)
        outs.append(out)
        s = out
    return concat(outs, axis=0)


def _rollout_candidates(model, p: np.ndarray, hidden, s_t: np.ndarray,
                        u_batch: np.ndarray) -> np.ndarray:
    """Untaped batched rollout of candidate sequences -> (B, n_seq, n_s)."""
    b = u_batch.shape[0]
    h = _branch_hidden(hidden, b)
    s = Tensor(np.repeat(s_t[None, :], b, axis=0))
    p_tile = Tensor(np.repeat(p[None, :], b, axis=0))
    outs = []
    for j in range(u_batch.shape[1]):
        x = concat([s, Tensor(u_batch[:, j, :]), p_tile], axis=1)
        out, h = model.step_batch(x, h)
        outs.append(out.data)
        s = out
    return np.stack(outs, axis=1)


# ---------------------------------------------------------------------------
# The per-tick optimization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizeResult:
    sequence: ControlSequence
    loss: float
    gammas: np.ndarray  # accepted step size per iteration (0 = incumbent kept)
    losses: np.ndarray  # accepted loss per iteration


def optimize(model, p, hidden, s_t, z_ref, u_prev: ControlSequence, mask,
             cfg: ControlConfig, u_lo=None, u_hi=None, fixed_k_n=None) -> OptimizeResult:
    """One tick of gradient-descent command search through the model.

    All quantities are normalized.  ``hidden`` is the live recurrent state
    snapshot at the current tick; rollouts branch from copies of it.
    ``u_lo``/``u_hi`` clip commands after every update; ``fixed_k_n`` pins
    the gain channel.  Ties in the candidate argmin resolve to the smallest
    step size, with the incumbent counting as step size zero.
    """
    if model.n_s != STATE_DIM:
        raise ContractError(f"controller expects {STATE_DIM}-dim states, model has {model.n_s}")
    p = np.asarray(p, dtype=np.float64).ravel()
    s_t = np.asarray(s_t, dtype=np.float64).ravel()
    z_ref = np.asarray(z_ref, dtype=np.float64).ravel()
    if p.shape != (model.n_p,) or s_t.shape != (model.n_s,) or z_ref.shape != (LATENT_DIM,):
        raise ContractError("p, s_t, or z_ref dimension mismatch with the model")
    if u_prev.u_seq.shape != (cfg.n_seq, model.n_u):
        raise ContractError(
            f"u_prev must be ({cfg.n_seq}, {model.n_u}), got {u_prev.u_seq.shape}")
    m = _mask_values(mask, cfg.n_seq)

    s_ref = np.zeros((cfg.n_seq, STATE_DIM))
    s_ref[:, LATENT] = z_ref

    def constrain(u: np.ndarray) -> np.ndarray:
        if fixed_k_n is not None:
            u[..., K_REF] = fixed_k_n
        if u_lo is not None:
            u = np.maximum(u, np.asarray(u_lo, dtype=np.float64))
        if u_hi is not None:
            u = np.minimum(u, np.asarray(u_hi, dtype=np.float64))
        return u

    u = constrain(warm_start(u_prev).u_seq.copy())
    gammas = gamma_schedule(cfg.n_batch, cfg.gamma_max, cfg.gamma_min_ratio)
    p_row = Tensor(p[None, :])
    iter_gammas, iter_losses = [], []

    for _ in range(cfg.n_iter):
        u_t = Tensor(u.copy())
        try:
            with Tape() as tape:
                pred = _rollout_taped(model, p_row, hidden, s_t, u_t)
                loss_t = control_loss(s_ref, pred, m, cfg.w_loss)
            (g,) = backward(tape, loss_t, [u_t])
        except NonFiniteError as err:
            raise OptimizationDivergedError(
                f"rollout from the incumbent sequence is non-finite: {err}") from err
        g_norm = float(np.sqrt(np.sum(g * g)))
        if g_norm == 0.0:  # stationary point: keep the incumbent this iteration
            iter_gammas.append(0.0)
            iter_losses.append(loss_t.item())
            continue
        direction = g / g_norm
        candidates = u[None, :, :] - gammas[:, None, None] * direction[None, :, :]
        batch = constrain(np.concatenate([u[None], candidates], axis=0))
        losses_b = np.full(batch.shape[0], np.inf)
        try:
            preds = _rollout_candidates(model, p, hidden, s_t, batch)
            vals = _loss_batch(s_ref, preds, m, cfg.w_loss)
            losses_b = np.where(np.isfinite(vals), vals, np.inf)
        except NonFiniteError:
            # isolate the offending candidates one by one
            for i in range(batch.shape[0]):
                try:
                    pred_i = _rollout_candidates(model, p, hidden, s_t, batch[i:i + 1])
                    val = _loss_batch(s_ref, pred_i, m, cfg.w_loss)[0]
                    losses_b[i] = val if np.isfinite(val) else np.inf
                except NonFiniteError:
                    losses_b[i] = np.inf
        if not np.isfinite(losses_b).any():
            raise OptimizationDivergedError("every candidate rollout diverged")
        best = int(np.argmin(losses_b))
        u = batch[best].copy()
        iter_gammas.append(0.0 if best == 0 else float(gammas[best - 1]))
        iter_losses.append(float(losses_b[best]))

    return OptimizeResult(ControlSequence(u), iter_losses[-1],
                          np.asarray(iter_gammas), np.asarray(iter_losses))
