"""Joint weight/bias training and frozen-weight online bias estimation."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..tensor import (
    AdamState,
    ContractError,
    MomentumSGDState,
    NonFiniteError,
    Tape,
    Tensor,
    adam_step,
    backward,
    concat,
    gather_rows,
    mean_sq_err,
    momentum_sgd_step,
    scale,
)
from .model import DpmpbModel, Episode, compute_norm_stats, zero_hidden

__all__ = [
    "EpisodeTooShortError",
    "TrainingConfig",
    "TrainingDivergedError",
    "estimate_pb_online",
    "train",
    "unroll_loss",
]


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite value."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class EpisodeTooShortError(ValueError):
    """An episode has fewer steps than one unroll window needs."""


@dataclass(frozen=True)
class TrainingConfig:
    """Hyperparameters for joint weight/bias fitting.

    ``n_expand`` is the unroll length of each training window; every
    minibatch holds ``batch`` contiguous windows sampled uniformly across
    episodes, and an epoch is one shuffled pass over all windows.
    """

    n_expand: int = 30
    batch: int = 300
    epochs: int = 300
    lr: float = 1e-3
    seed: int = 0
    bias_decay: float = 0.0

    def __post_init__(self):
        if min(self.n_expand, self.batch, self.epochs) < 1 or self.lr <= 0:
            raise ContractError("training config values must be positive")
        if self.bias_decay < 0:
            raise ContractError("bias_decay must be non-negative")


def unroll_loss(model: DpmpbModel, p_rows: Tensor, states_n: np.ndarray,
                commands_n: np.ndarray) -> Tensor:
    """Teacher-forced MSE over a batch of unroll windows.

    ``states_n``: (B, T+1, n_s) normalized ground truth; ``commands_n``:
    (B, T, n_u); ``p_rows``: (B, n_p) bias tensor rows.  Ground-truth states
    feed every step; the loss compares each predicted next state with the
    recorded one.
    """
    n_steps = commands_n.shape[1]
    batch = commands_n.shape[0]
    hidden = zero_hidden(model, batch)
    su = np.concatenate([states_n[:, :n_steps], commands_n], axis=2)
    total = None
    for t in range(n_steps):
        x = concat([Tensor(su[:, t]), p_rows], axis=1)
        pred, hidden = model.step_batch(x, hidden)
        step_mse = mean_sq_err(pred, Tensor(states_n[:, t + 1]))
        total = step_mse if total is None else total + step_mse
    return scale(total, 1.0 / n_steps)


def _episode_windows(episodes, n_expand):
    """All valid (episode index, offset) pairs; short episodes are skipped."""
    windows = []
    for idx, ep in enumerate(episodes):
        if len(ep) < n_expand + 1:
            warnings.warn(
                f"episode trial={ep.trial_id} tag={ep.material_tag!r} has "
                f"{len(ep)} steps, needs {n_expand + 1}; skipped", stacklevel=3)
            continue
        windows.extend((idx, off) for off in range(len(ep) - n_expand))
    return windows


def _gather_batch(states_n, commands_n, rows, windows, chosen, n_expand):
    """Stack the selected windows into contiguous training arrays."""
    s_batch = np.empty((len(chosen), n_expand + 1, states_n[0].shape[1]))
    u_batch = np.empty((len(chosen), n_expand, commands_n[0].shape[1]))
    r_batch = np.empty(len(chosen), dtype=np.intp)
    for j, w in enumerate(chosen):
        idx, off = windows[w]
        s_batch[j] = states_n[idx][off:off + n_expand + 1]
        u_batch[j] = commands_n[idx][off:off + n_expand]
        r_batch[j] = rows[idx]
    return s_batch, u_batch, r_batch


def train(episodes, cfg: TrainingConfig = TrainingConfig(), log_every: int = 0) -> DpmpbModel:
    """Fit weights and one bias row per trial id, simultaneously, with Adam.

    Biases start at zero and receive gradients only through the windows of
    their own trial.  Returns the model with ``stats``, ``biases``,
    ``trial_ids``, and per-epoch ``loss_history`` filled in.  A dataset with
    a single trial trains fine — its bias is simply unidentifiable and tends
    to stay near zero.
    """
    episodes = list(episodes)
    if not episodes:
        raise ContractError("training needs at least one episode")
    n_s = episodes[0].states.shape[1]
    n_u = episodes[0].commands.shape[1]
    for ep in episodes:
        if ep.states.shape[1] != n_s or ep.commands.shape[1] != n_u:
            raise ContractError("episodes disagree on state/command dimensions")
    model = DpmpbModel(n_s=n_s, n_u=n_u, n_p=2, seed=cfg.seed)
    model.stats = compute_norm_stats(episodes)
    trial_ids = sorted({ep.trial_id for ep in episodes})
    model.trial_ids = trial_ids
    model.biases = Tensor(np.zeros((len(trial_ids), model.n_p)))

    states_n = [model.stats.normalize_state(ep.states) for ep in episodes]
    commands_n = [model.stats.normalize_command(ep.commands) for ep in episodes]
    rows = [trial_ids.index(ep.trial_id) for ep in episodes]
    windows = _episode_windows(episodes, cfg.n_expand)
    if not windows:
        raise ContractError(f"no episode is long enough for a {cfg.n_expand}-step window")

    params = model.parameters() + [model.biases]
    opt = AdamState()
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(windows))
        losses = []
        for start in range(0, len(order), cfg.batch):
            chosen = order[start:start + cfg.batch]
            s_b, u_b, r_b = _gather_batch(states_n, commands_n, rows, windows,
                                          chosen, cfg.n_expand)
            try:
                with Tape() as tape:
                    p_rows = gather_rows(model.biases, r_b)
                    loss = unroll_loss(model, p_rows, s_b, u_b)
                grads = backward(tape, loss, params)
            except NonFiniteError as err:
                raise TrainingDivergedError(epoch, str(err)) from err
            if cfg.bias_decay:
                # L2 pull on the bias table only: per-trial codes keep just the
                # dynamics information the observed state cannot supply.
                grads[-1] = grads[-1] + cfg.bias_decay * model.biases.data
            adam_step(params, grads, opt, cfg.lr)
            losses.append(loss.item())
        model.loss_history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"[train] epoch {epoch + 1}/{cfg.epochs} "
                  f"mse {model.loss_history[-1]:.6f}")
    return model


def estimate_pb_online(model: DpmpbModel, p_init: np.ndarray, episode: Episode,
                       lr: float = 0.05, momentum: float = 0.9, epochs: int = 30,
                       n_expand: int = 30) -> np.ndarray:
    """Adapt only the bias against one fresh episode; weights stay frozen.

    Full-batch momentum-SGD over the episode's unroll windows, one step per
    epoch.  Returns the (epochs+1, n_p) bias trajectory including the
    starting point; the model object is never mutated.
    """
    if model.stats is None:
        raise ContractError("model has no normalization statistics; train it first")
    if len(episode) < n_expand + 1:
        raise EpisodeTooShortError(
            f"episode has {len(episode)} steps, needs {n_expand + 1}")
    p0 = np.asarray(p_init, dtype=np.float64).ravel()
    if p0.shape != (model.n_p,):
        raise ContractError(f"bias must have dimension {model.n_p}, got {p0.shape}")

    states_n = model.stats.normalize_state(episode.states)
    commands_n = model.stats.normalize_command(episode.commands)
    n_windows = len(episode) - n_expand
    s_b = np.stack([states_n[off:off + n_expand + 1] for off in range(n_windows)])
    u_b = np.stack([commands_n[off:off + n_expand] for off in range(n_windows)])
    r_b = np.zeros(n_windows, dtype=np.intp)

    p_table = Tensor(p0[None, :].copy())
    opt = MomentumSGDState()
    trajectory = [p_table.data[0].copy()]
    for epoch in range(epochs):
        try:
            with Tape() as tape:
                p_rows = gather_rows(p_table, r_b)
                loss = unroll_loss(model, p_rows, s_b, u_b)
            grads = backward(tape, loss, [p_table])
        except NonFiniteError as err:
            raise TrainingDivergedError(epoch, str(err)) from err
        momentum_sgd_step([p_table], grads, opt, lr, momentum)
        trajectory.append(p_table.data[0].copy())
    return np.stack(trajectory)
