"""Network architecture, normalization, and persistence for the dynamics model.

Layer stack (hidden activations tanh, output linear — targets are z-scored
and routinely exceed [-1, 1], which a squashed output could never reach):

    input  (N_s + N_u + N_p)  ->  FC 300 -> FC 100 -> FC 30
        -> LSTM 30 -> LSTM 30
        -> FC 100 -> FC 300 -> FC N_s (linear)

All forward passes operate in normalized units; ``NormStats`` converts
between raw sensor records and the network's z-scored space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..tensor import (
    ContractError,
    Tensor,
    blocks_digest,
    concat,
    load_blocks,
    matmul,
    save_blocks,
    sigmoid,
    slice_,
    tanh,
)

__all__ = [
    "Episode",
    "NormStats",
    "DpmpbModel",
    "FC_IN_WIDTHS",
    "FC_OUT_WIDTHS",
    "LSTM_WIDTH",
    "TICK_SECONDS",
    "compute_norm_stats",
    "forward_step",
    "load_dynamics_model",
    "rollout",
    "save_dynamics_model",
    "weights_digest",
    "zero_hidden",
]

FC_IN_WIDTHS = (300, 100, 30)
FC_OUT_WIDTHS = (100, 300)
LSTM_WIDTH = 30
TICK_SECONDS = 0.2  # 5 Hz control/logging rate


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormStats:
    """Per-dimension z-score statistics for states and commands.

    Dimensions whose corpus standard deviation falls below ``eps`` keep a
    unit divisor instead (``*_guarded`` marks them); they normalize to 0
    and round-trip exactly.
    """

    s_mean: np.ndarray
    s_std: np.ndarray
    u_mean: np.ndarray
    u_std: np.ndarray
    s_guarded: np.ndarray
    u_guarded: np.ndarray
    eps: float = 1e-8

    def normalize_state(self, s: np.ndarray) -> np.ndarray:
        return (np.asarray(s, dtype=np.float64) - self.s_mean) / self.s_std

    def denormalize_state(self, sn: np.ndarray) -> np.ndarray:
        return np.asarray(sn, dtype=np.float64) * self.s_std + self.s_mean

    def normalize_command(self, u: np.ndarray) -> np.ndarray:
        return (np.asarray(u, dtype=np.float64) - self.u_mean) / self.u_std

    def denormalize_command(self, un: np.ndarray) -> np.ndarray:
        return np.asarray(un, dtype=np.float64) * self.u_std + self.u_mean


def _guarded_std(arr: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    std = arr.std(axis=0)
    guarded = std < eps
    return np.where(guarded, 1.0, std), guarded


def compute_norm_stats(episodes, eps: float = 1e-8) -> NormStats:
    """Z-score statistics over every step of every episode."""
    states = np.concatenate([ep.states for ep in episodes], axis=0)
    commands = np.concatenate([ep.commands for ep in episodes], axis=0)
    s_std, s_guard = _guarded_std(states, eps)
    u_std, u_guard = _guarded_std(commands, eps)
    return NormStats(
        s_mean=states.mean(axis=0), s_std=s_std,
        u_mean=commands.mean(axis=0), u_std=u_std,
        s_guarded=s_guard, u_guarded=u_guard, eps=eps,
    )


# ---------------------------------------------------------------------------
# Episodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Episode:
    """One recorded trial: raw states and commands sampled at 5 Hz.

    ``trial_id`` groups episodes that share a bias vector during training
    (here: one id per cloth material).  ``material_tag`` is metadata only.
    """

    material_tag: str
    trial_id: int
    states: np.ndarray    # (T, N_s) raw units
    commands: np.ndarray  # (T, N_u) raw units
    times: np.ndarray     # (T,) seconds, strictly increasing at 0.2 s

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.float64)
        commands = np.asarray(self.commands, dtype=np.float64)
        times = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "commands", commands)
        object.__setattr__(self, "times", times)
        if states.ndim != 2 or commands.ndim != 2 or times.ndim != 1:
            raise ContractError("episode arrays must be (T,N_s), (T,N_u), (T,)")
        if not (states.shape[0] == commands.shape[0] == times.shape[0]):
            raise ContractError(
                f"episode lengths disagree: {states.shape[0]} states, "
                f"{commands.shape[0]} commands, {times.shape[0]} times")
        dt = np.diff(times)
        if len(dt) and not np.allclose(dt, TICK_SECONDS, atol=1e-9):
            raise ContractError("episode timestamps must advance by 0.2 s")
        if len(dt) and not np.all(dt > 0):
            raise ContractError("episode timestamps must strictly increase")

    def __len__(self) -> int:
        return self.states.shape[0]

    @classmethod
    def from_arrays(cls, material_tag, trial_id, states, commands, t0=0.0):
        n = np.asarray(states).shape[0]
        times = t0 + TICK_SECONDS * np.arange(n)
        return cls(material_tag, trial_id, states, commands, times)


# ---------------------------------------------------------------------------
# The model
# ---------------------------------------------------------------------------


class DpmpbModel:
    """Parameter container plus the batched one-step forward pass.

    ``biases`` is the per-trial bias table (K, n_p) fitted by training;
    ``trial_ids`` maps its rows back to dataset trial ids.  ``stats`` holds
    the normalization attached to the trained model.  Instances are treated
    as immutable after training; forward passes never write to them.
    """

    def __init__(self, n_s: int = 7, n_u: int = 3, n_p: int = 2, seed: int = 0):
        if min(n_s, n_u, n_p) < 1:
            raise ContractError("state, command, and bias dims must be >= 1")
        self.n_s, self.n_u, self.n_p = int(n_s), int(n_u), int(n_p)
        self.stats: NormStats | None = None
        self.biases = Tensor(np.zeros((0, self.n_p)))
        self.trial_ids: list[int] = []
        self.loss_history: list[float] = []
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)

        def fc(name, n_in, n_out):
            std = np.sqrt(1.0 / n_in)  # Xavier-style for tanh blocks
            self.params[f"{name}_w"] = Tensor(rng.normal(0.0, std, (n_in, n_out)))
            self.params[f"{name}_b"] = Tensor(np.zeros(n_out))

        widths = (self.n_s + self.n_u + self.n_p,) + FC_IN_WIDTHS
        for i in range(3):
            fc(f"fc_in{i}", widths[i], widths[i + 1])
        for j in (0, 1):
            h = LSTM_WIDTH
            std = np.sqrt(1.0 / h)
            self.params[f"lstm{j}_wx"] = Tensor(rng.normal(0.0, std, (h, 4 * h)))
            self.params[f"lstm{j}_wh"] = Tensor(rng.normal(0.0, std, (h, 4 * h)))
            b = np.zeros(4 * h)
            b[h:2 * h] = 1.0  # forget gate starts open so memory survives init
            self.params[f"lstm{j}_b"] = Tensor(b)
        out_widths = (LSTM_WIDTH,) + FC_OUT_WIDTHS + (self.n_s,)
        for i in range(3):
            fc(f"fc_out{i}", out_widths[i], out_widths[i + 1])
        self._param_names = sorted(self.params)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in self._param_names]

    def parameter_names(self) -> list[str]:
        return list(self._param_names)

    def bias_for_trial(self, trial_id: int) -> np.ndarray:
        row = self.trial_ids.index(trial_id)
        return self.biases.data[row].copy()

    # -- forward -----------------------------------------------------------

    def _lstm_cell(self, j: int, x: Tensor, h: Tensor, c: Tensor):
        w = LSTM_WIDTH
        gates = matmul(x, self.params[f"lstm{j}_wx"]) \
            + matmul(h, self.params[f"lstm{j}_wh"]) + self.params[f"lstm{j}_b"]
        i_g = sigmoid(slice_(gates, (slice(None), slice(0, w))))
        f_g = sigmoid(slice_(gates, (slice(None), slice(w, 2 * w))))
        g_g = tanh(slice_(gates, (slice(None), slice(2 * w, 3 * w))))
        o_g = sigmoid(slice_(gates, (slice(None), slice(3 * w, 4 * w))))
        c_new = f_g * c + i_g * g_g
        h_new = o_g * tanh(c_new)
        return h_new, c_new

    def step_batch(self, x: Tensor, hidden):
        """One step for a (B, n_s+n_u+n_p) normalized input batch.

        ``hidden`` is ((h1, c1), (h2, c2)) with (B, 30) tensors; returns
        the (B, n_s) normalized prediction and the new hidden pair.
        """
        expect = self.n_s + self.n_u + self.n_p
        if x.ndim != 2 or x.shape[1] != expect:
            raise ContractError(f"expected (B, {expect}) input, got {x.shape}")
        (h1, c1), (h2, c2) = hidden
        h = x
        for i in range(3):
            h = tanh(matmul(h, self.params[f"fc_in{i}_w"]) + self.params[f"fc_in{i}_b"])
        h1, c1 = self._lstm_cell(0, h, h1, c1)
        h2, c2 = self._lstm_cell(1, h1, h2, c2)
        h = h2
        for i in range(2):
            h = tanh(matmul(h, self.params[f"fc_out{i}_w"]) + self.params[f"fc_out{i}_b"])
        out = matmul(h, self.params["fc_out2_w"]) + self.params["fc_out2_b"]
        return out, ((h1, c1), (h2, c2))


def zero_hidden(model: DpmpbModel, batch: int = 1):
    """Fresh all-zero LSTM state pair for a batch."""
    mk = lambda: Tensor(np.zeros((batch, LSTM_WIDTH)))
    return ((mk(), mk()), (mk(), mk()))


def _check_vec(name, v, dim):
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.shape != (dim,):
        raise ContractError(f"{name} must have dimension {dim}, got shape {arr.shape}")
    return arr


def forward_step(model: DpmpbModel, s: np.ndarray, u: np.ndarray, p: np.ndarray, hidden):
    """One normalized prediction step for single (unbatched) vectors.

    Returns ``(s_next, hidden')`` with ``s_next`` a plain (n_s,) array.
    """
    sv = _check_vec("state", s, model.n_s)
    uv = _check_vec("command", u, model.n_u)
    pv = _check_vec("bias", p, model.n_p)
    x = Tensor(np.concatenate([sv, uv, pv])[None, :])
    out, hidden = model.step_batch(x, hidden)
    return out.data[0].copy(), hidden


def rollout(model: DpmpbModel, s0: np.ndarray, commands: np.ndarray, p: np.ndarray,
            hidden=None):
    """Free-running rollout: feed each prediction back as the next state.

    ``commands`` is (T, n_u) normalized; returns (T, n_s) normalized
    predictions and the final hidden state.
    """
    cmds = np.asarray(commands, dtype=np.float64)
    if cmds.ndim != 2 or cmds.shape[1] != model.n_u:
        raise ContractError(f"commands must be (T, {model.n_u}), got {cmds.shape}")
    hidden = zero_hidden(model) if hidden is None else hidden
    s = _check_vec("state", s0, model.n_s)
    preds = np.empty((cmds.shape[0], model.n_s))
    for t in range(cmds.shape[0]):
        s, hidden = forward_step(model, s, cmds[t], p, hidden)
        preds[t] = s
    return preds, hidden


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _model_blocks(model: DpmpbModel) -> dict[str, np.ndarray]:
    blocks = {f"param/{k}": v.data for k, v in model.params.items()}
    blocks["meta/dims"] = np.array([model.n_s, model.n_u, model.n_p], dtype=np.float64)
    blocks["biases/table"] = model.biases.data
    blocks["biases/trial_ids"] = np.asarray(model.trial_ids, dtype=np.float64)
    blocks["telemetry/loss_history"] = np.asarray(model.loss_history, dtype=np.float64)
    if model.stats is not None:
        st = model.stats
        blocks["stats/s_mean"] = st.s_mean
        blocks["stats/s_std"] = st.s_std
        blocks["stats/u_mean"] = st.u_mean
        blocks["stats/u_std"] = st.u_std
        blocks["stats/s_guarded"] = st.s_guarded.astype(np.float64)
        blocks["stats/u_guarded"] = st.u_guarded.astype(np.float64)
    return blocks


def save_dynamics_model(model: DpmpbModel, path) -> None:
    save_blocks(path, _model_blocks(model))


def load_dynamics_model(path) -> DpmpbModel:
    blocks = load_blocks(path)
    n_s, n_u, n_p = (int(v) for v in blocks["meta/dims"])
    model = DpmpbModel(n_s=n_s, n_u=n_u, n_p=n_p, seed=0)
    for name, tensor in model.params.items():
        data = blocks[f"param/{name}"]
        if data.shape != tensor.data.shape:
            raise ContractError(f"checkpoint block {name} has shape {data.shape}, "
                                f"expected {tensor.data.shape}")
        tensor.data = data.copy()
    model.biases = Tensor(blocks["biases/table"].copy())
    model.trial_ids = [int(v) for v in blocks["biases/trial_ids"]]
    model.loss_history = list(blocks["telemetry/loss_history"])
    if "stats/s_mean" in blocks:
        model.stats = NormStats(
            s_mean=blocks["stats/s_mean"].copy(),
            s_std=blocks["stats/s_std"].copy(),
            u_mean=blocks["stats/u_mean"].copy(),
            u_std=blocks["stats/u_std"].copy(),
            s_guarded=blocks["stats/s_guarded"] > 0.5,
            u_guarded=blocks["stats/u_guarded"] > 0.5,
        )
    return model


def weights_digest(model: DpmpbModel) -> str:
    """Content hash of the network weights only (biases/stats excluded)."""
    return blocks_digest({f"param/{k}": v.data for k, v in model.params.items()})
