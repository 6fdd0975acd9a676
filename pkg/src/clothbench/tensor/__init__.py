from .core import (
    DTYPE,
    ContractError,
    NonFiniteError,
    ShapeMismatchError,
    Tape,
    Tensor,
    add,
    backward,
    concat,
    gather_rows,
    l2_norm,
    matmul,
    mean_sq_err,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_,
    sub,
    sum_sq,
    tanh,
)
from .nn import batchnorm, bce_with_logits, conv2d, deconv2d
from .optim import AdamState, MomentumSGDState, adam_step, momentum_sgd_step
from .checkpoint import (
    CheckpointError,
    blocks_digest,
    deserialize_blocks,
    load_blocks,
    save_blocks,
    serialize_blocks,
)
from .gradcheck import gradient_check
