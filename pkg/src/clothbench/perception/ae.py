"""Silhouette autoencoder: 96x128 binary image <-> 3-dim latent code.

Layer plan (kernel 3, stride 2, padding 1 everywhere):

    encoder: 1 -> 8 -> 16 -> 32 -> 64 -> 128 channels   (96x128 -> 3x4)
             flatten 1536 -> 256 -> 3
    decoder: 3 -> 256 -> 1536 -> reshape (128, 3, 4)
             128 -> 64 -> 32 -> 16 -> 8 -> 1 channels   (3x4 -> 96x128)

Batch normalization sits on every layer except the final deconvolution,
whose raw output is the pixel logit (sigmoid applied at decode time).
Hidden layers use ReLU; the 3-dim bottleneck itself is left unsquashed
(batchnorm only) so latent coordinates keep their sign symmetry.
"""

from __future__ import annotations

import numpy as np

from ..tensor import (
    AdamState,
    ContractError,
    NonFiniteError,
    Tape,
    Tensor,
    adam_step,
    backward,
    batchnorm,
    bce_with_logits,
    blocks_digest,
    conv2d,
    deconv2d,
    load_blocks,
    matmul,
    relu,
    reshape,
    save_blocks,
    sigmoid,
)

__all__ = [
    "AutoencoderModel",
    "TrainingDivergedError",
    "autoencoder_digest",
    "decode",
    "encode",
    "encode_many",
    "iou",
    "load_autoencoder",
    "save_autoencoder",
    "train_ae",
]

IMAGE_SHAPE = (96, 128)  # rows (height), columns (width)
LATENT_DIM = 3
CONV_CHANNELS = (8, 16, 32, 64, 128)
FC_WIDTH = 256
_BOTTLENECK_HW = (3, 4)  # spatial size after five stride-2 halvings
_FLAT = CONV_CHANNELS[-1] * _BOTTLENECK_HW[0] * _BOTTLENECK_HW[1]  # 1536


class TrainingDivergedError(RuntimeError):
    """Raised when a training step produces a non-finite value."""

    def __init__(self, epoch: int, message: str):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


class AutoencoderModel:
    """Parameter container plus pure encode/decode passes.

    ``params`` maps names to Tensors; ``running`` maps names to plain
    arrays holding batchnorm running statistics (mutated only while
    ``training=True``).  Inference is side-effect free and deterministic.
    """

    def __init__(self, seed: int = 0):
        self.params: dict[str, Tensor] = {}
        self.running: dict[str, np.ndarray] = {}
        self.loss_history: list[float] = []
        self._bn_momentum = 0.1
        rng = np.random.default_rng(seed)

        def conv_param(name, c_in, c_out):
            std = np.sqrt(2.0 / (c_in * 9))
            self.params[f"{name}_w"] = Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)))
            self.params[f"{name}_b"] = Tensor(np.zeros(c_out))

        def deconv_param(name, c_in, c_out):
            std = np.sqrt(2.0 / (c_in * 9))
            self.params[f"{name}_w"] = Tensor(rng.normal(0.0, std, (c_in, c_out, 3, 3)))
            self.params[f"{name}_b"] = Tensor(np.zeros(c_out))

        def fc_param(name, n_in, n_out):
            std = np.sqrt(2.0 / n_in)
            self.params[f"{name}_w"] = Tensor(rng.normal(0.0, std, (n_in, n_out)))
            self.params[f"{name}_b"] = Tensor(np.zeros(n_out))

        def bn_param(name, width):
            self.params[f"{name}_gamma"] = Tensor(np.ones(width))
            self.params[f"{name}_beta"] = Tensor(np.zeros(width))
            self.running[f"{name}_mean"] = np.zeros(width)
            self.running[f"{name}_var"] = np.ones(width)

        chans = (1,) + CONV_CHANNELS
        for i in range(5):
            conv_param(f"enc_conv{i}", chans[i], chans[i + 1])
            bn_param(f"enc_bn{i}", chans[i + 1])
        fc_param("enc_fc0", _FLAT, FC_WIDTH)
        bn_param("enc_bnf0", FC_WIDTH)
        fc_param("enc_fc1", FC_WIDTH, LATENT_DIM)
        bn_param("enc_bnf1", LATENT_DIM)

        fc_param("dec_fc0", LATENT_DIM, FC_WIDTH)
        bn_param("dec_bnf0", FC_WIDTH)
        fc_param("dec_fc1", FC_WIDTH, _FLAT)
        bn_param("dec_bnf1", _FLAT)
        rev = CONV_CHANNELS[::-1] + (1,)
        for i in range(5):
            deconv_param(f"dec_deconv{i}", rev[i], rev[i + 1])
            if i < 4:  # final layer emits raw logits, no normalization
                bn_param(f"dec_bn{i}", rev[i + 1])

        self._param_names = sorted(self.params)

    # -- helpers ----------------------------------------------------------

    def parameters(self) -> list[Tensor]:
        return [self.params[k] for k in self._param_names]

    def parameter_names(self) -> list[str]:
        return list(self._param_names)

    def _bn(self, x, name, training):
        return batchnorm(
            x,
            self.params[f"{name}_gamma"],
            self.params[f"{name}_beta"],
            self.running[f"{name}_mean"],
            self.running[f"{name}_var"],
            training,
            momentum=self._bn_momentum,
        )

    # -- forward passes ----------------------------------------------------

    def encode_batch(self, images: Tensor, training: bool = False) -> Tensor:
        """(N, 1, 96, 128) pixels in [0,1] -> (N, 3) latent codes."""
        h = images
        for i in range(5):
            h = conv2d(h, self.params[f"enc_conv{i}_w"], self.params[f"enc_conv{i}_b"])
            h = relu(self._bn(h, f"enc_bn{i}", training))
        h = reshape(h, (h.shape[0], _FLAT))
        h = matmul(h, self.params["enc_fc0_w"]) + self.params["enc_fc0_b"]
        h = relu(self._bn(h, "enc_bnf0", training))
        h = matmul(h, self.params["enc_fc1_w"]) + self.params["enc_fc1_b"]
        return self._bn(h, "enc_bnf1", training)

    def decode_batch(self, z: Tensor, training: bool = False) -> Tensor:
        """(N, 3) latent codes -> (N, 1, 96, 128) pixel logits."""
        h = matmul(z, self.params["dec_fc0_w"]) + self.params["dec_fc0_b"]
        h = relu(self._bn(h, "dec_bnf0", training))
        h = matmul(h, self.params["dec_fc1_w"]) + self.params["dec_fc1_b"]
        h = relu(self._bn(h, "dec_bnf1", training))
        h = reshape(h, (h.shape[0], CONV_CHANNELS[-1], *_BOTTLENECK_HW))
        for i in range(4):
            h = deconv2d(h, self.params[f"dec_deconv{i}_w"], self.params[f"dec_deconv{i}_b"])
            h = relu(self._bn(h, f"dec_bn{i}", training))
        return deconv2d(h, self.params["dec_deconv4_w"], self.params["dec_deconv4_b"])


# ---------------------------------------------------------------------------
# Functional API
# ---------------------------------------------------------------------------


def _as_batch(images: np.ndarray) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1:] != IMAGE_SHAPE:
        raise ContractError(f"expected (n, {IMAGE_SHAPE[0]}, {IMAGE_SHAPE[1]}) images, got {arr.shape}")
    return arr[:, None, :, :]


def encode(model: AutoencoderModel, image: np.ndarray) -> np.ndarray:
    """One 96x128 binary image -> its 3-dim latent code (inference mode)."""
    batch = _as_batch(image)
    if batch.shape[0] != 1:
        raise ContractError(f"encode takes a single image, got {batch.shape[0]}")
    return model.encode_batch(Tensor(batch)).data[0].copy()


def encode_many(model: AutoencoderModel, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """(N, 96, 128) images -> (N, 3) latent codes, batched for speed."""
    batch = _as_batch(images)
    out = []
    for i in range(0, batch.shape[0], batch_size):
        out.append(model.encode_batch(Tensor(batch[i:i + batch_size])).data)
    return np.concatenate(out, axis=0)


def decode(model: AutoencoderModel, z: np.ndarray) -> np.ndarray:
    """3-dim latent -> 96x128 probability image in [0, 1]."""
    za = np.asarray(z, dtype=np.float64).ravel()
    if za.shape != (LATENT_DIM,):
        raise ContractError(f"expected a {LATENT_DIM}-dim latent, got shape {za.shape}")
    logits = model.decode_batch(Tensor(za[None, :]))
    return sigmoid(logits).data[0, 0].copy()


def iou(mask_a: np.ndarray, mask_b: np.ndarray) -> float:
    """Intersection over union of two binary masks (1.0 when both empty)."""
    a = np.asarray(mask_a) > 0
    b = np.asarray(mask_b) > 0
    if a.shape != b.shape:
        raise ContractError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def train_ae(
    images: np.ndarray,
    epochs: int = 40,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    min_images: int = 200,
    log_every: int = 0,
) -> AutoencoderModel:
    """Train the autoencoder on a stack of binary images.

    ``images``: (N, 96, 128) array with pixel values in {0, 1}; N must cover
    the motion repertoire (contract: at least ``min_images`` frames — repeat
    frames to memorize a single image).  Returns the trained model with its
    per-epoch mean loss recorded in ``loss_history``.
    """
    batch = _as_batch(images)
    n = batch.shape[0]
    if n < min_images:
        raise ContractError(f"need at least {min_images} training images, got {n}")
    model = AutoencoderModel(seed=seed)
    # Silhouettes are sparse, so start the output bias at the foreground
    # log-odds: the first epochs then refine shape instead of re-learning
    # the background rate pixel by pixel.
    rate = float(np.clip(batch.mean(), 1e-4, 1.0 - 1e-4))
    model.params["dec_deconv4_b"].data[:] = np.log(rate / (1.0 - rate))
    params = model.parameters()
    state = AdamState()
    rng = np.random.default_rng(seed + 1)
    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            xb = Tensor(batch[idx])
            try:
                with Tape() as tape:
                    z = model.encode_batch(xb, training=True)
                    logits = model.decode_batch(z, training=True)
                    loss = bce_with_logits(logits, xb)
                grads = backward(tape, loss, params)
            except NonFiniteError as err:
                raise TrainingDivergedError(epoch, str(err)) from err
            adam_step(params, grads, state, lr)
            losses.append(loss.item())
        model.loss_history.append(float(np.mean(losses)))
        if log_every and (epoch + 1) % log_every == 0:
            print(f"[train_ae] epoch {epoch + 1}/{epochs} loss {model.loss_history[-1]:.5f}")
    _calibrate_batchnorm(model, batch, batch_size)
    return model


def _calibrate_batchnorm(model: AutoencoderModel, batch: np.ndarray, batch_size: int) -> None:
    """Re-estimate running batchnorm statistics at the final weights.

    During training the exponential moving averages lag the weights they
    describe; at layers whose batch variance is tiny the inference-mode
    normalizer amplifies that staleness enormously.  One untaped pass with a
    cumulative-average schedule (momentum 1/(b+1) for batch b) replaces the
    averages with the actual activation statistics of the finished model,
    after which they stay frozen.
    """
    for b, start in enumerate(range(0, batch.shape[0], batch_size)):
        model._bn_momentum = 1.0 / (b + 1)
        xb = Tensor(batch[start:start + batch_size])
        z = model.encode_batch(xb, training=True)
        model.decode_batch(z, training=True)
    model._bn_momentum = 0.1


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def _model_blocks(model: AutoencoderModel) -> dict[str, np.ndarray]:
    blocks = {f"param/{k}": v.data for k, v in model.params.items()}
    blocks.update({f"running/{k}": v for k, v in model.running.items()})
    blocks["telemetry/loss_history"] = np.asarray(model.loss_history, dtype=np.float64)
    return blocks


def save_autoencoder(model: AutoencoderModel, path) -> None:
    save_blocks(path, _model_blocks(model))


def load_autoencoder(path) -> AutoencoderModel:
    blocks = load_blocks(path)
    model = AutoencoderModel(seed=0)
    for name, tensor in model.params.items():
        data = blocks[f"param/{name}"]
        if data.shape != tensor.data.shape:
            raise ContractError(f"checkpoint block {name} has shape {data.shape}, "
                                f"expected {tensor.data.shape}")
        tensor.data = data.copy()
    for name in model.running:
        model.running[name] = blocks[f"running/{name}"].copy()
    model.loss_history = list(blocks.get("telemetry/loss_history", np.empty(0)))
    return model


def autoencoder_digest(model: AutoencoderModel) -> str:
    """Stable content hash of all weights and running statistics."""
    return blocks_digest(_model_blocks(model))
