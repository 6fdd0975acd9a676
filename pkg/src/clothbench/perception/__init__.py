"""Convolutional autoencoder compressing silhouettes to a 3-number latent.

The encoder stacks five stride-2 convolutions and two fully-connected
layers down to a 3-dim code; the decoder mirrors it with transposed
convolutions back to a per-pixel probability image.
"""

from .ae import (
    AutoencoderModel,
    TrainingDivergedError,
    autoencoder_digest,
    decode,
    encode,
    encode_many,
    iou,
    load_autoencoder,
    save_autoencoder,
    train_ae,
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
