"""Central-difference verification of taped gradients."""

import numpy as np

from .core import Tape, backward


def gradient_check(f, tensors, n_probe=10, eps=1e-5, rng=None):
    """Max relative error between taped gradients and central differences.

    f(*tensors) must return a scalar Tensor and be re-evaluable (no hidden
    state mutation).  Probes n_probe random coordinates per input, or every
    coordinate for small inputs.

    The error is measured relative to max(|analytic| + |numeric|, gradient
    field scale): central differences carry roundoff of order
    eps_machine * |f| / eps, so a coordinate whose true derivative is zero
    would otherwise report pure cancellation noise as mismatch.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    with Tape() as tape:
        loss = f(*tensors)
    grads = backward(tape, loss, tensors)
    scale = max((float(np.max(np.abs(g))) for g in grads if g.size), default=0.0)
    worst = 0.0
    for t, g in zip(tensors, grads):
        flat = t.data.reshape(-1)
        gflat = np.asarray(g).reshape(-1)
        if flat.size <= n_probe:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=n_probe, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            f_hi = float(f(*tensors).data)
            flat[i] = orig - eps
            f_lo = float(f(*tensors).data)
            flat[i] = orig
            numeric = (f_hi - f_lo) / (2.0 * eps)
            analytic = gflat[i]
            denom = max(1e-8, scale, abs(analytic) + abs(numeric))
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst
