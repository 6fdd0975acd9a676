"""Convolution, transposed convolution, batch normalization, logit BCE.

conv2d and deconv2d are hard-wired to the square-kernel, same-padding family
used by the silhouette autoencoder (kernel 3, stride 2, pad 1); deconv2d adds
one row/column of output padding so spatial dims exactly double.
"""

import numpy as np

from .core import DTYPE, ShapeMismatchError, Tensor, _emit


def _out_dim(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def _im2col(x, k, stride, pad, oh, ow):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            col[:, :, ki, kj] = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
    return col.reshape(n, c * k * k, oh * ow)


def _col2im(col, x_shape, k, stride, pad, oh, ow):
    n, c, h, w = x_shape
    colr = col.reshape(n, c, k, k, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += colr[:, :, ki, kj]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x, w, b=None, stride=2, pad=1):
    """x: (N,C,H,W), w: (F,C,k,k), optional b: (F,) -> (N,F,OH,OW)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects 4-d tensors, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh, ow = _out_dim(h, k, stride, pad), _out_dim(wd, k, stride, pad)
    col = _im2col(x.data, k, stride, pad, oh, ow)
    wm = w.data.reshape(f, c * k * k)
    out = np.matmul(wm, col).reshape(n, f, oh, ow)
    if b is not None:
        out = out + b.data.reshape(1, f, 1, 1)

    def bwd(g):
        gm = g.reshape(n, f, oh * ow)
        dw = np.matmul(gm, col.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dcol = np.matmul(wm.T, gm)
        dx = _col2im(dcol, x.shape, k, stride, pad, oh, ow)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, bwd)


def deconv2d(x, w, b=None, stride=2, pad=1, out_pad=1):
    """Transposed conv2d.  x: (N,C,H,W), w: (C,F,k,k) -> (N,F,OH,OW).

    OH = (H-1)*stride - 2*pad + k + out_pad; the defaults double H and W.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"deconv2d expects 4-d tensors, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatchError(f"channel mismatch: input {x.shape} vs kernel {w.shape}")
    n, c, h, wd = x.shape
    _, f, k, _ = w.shape
    oh = (h - 1) * stride - 2 * pad + k + out_pad
    ow = (wd - 1) * stride - 2 * pad + k + out_pad
    wm = w.data.reshape(c, f * k * k)
    xm = x.data.reshape(n, c, h * wd)
    dcol = np.matmul(wm.T, xm)
    out = _col2im(dcol, (n, f, oh, ow), k, stride, pad, h, wd)
    if b is not None:
        out = out + b.data.reshape(1, f, 1, 1)

    def bwd(g):
        col_g = _im2col(g, k, stride, pad, h, wd)
        dx = np.matmul(wm, col_g).reshape(x.shape)
        dw = np.matmul(xm, col_g.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    inputs = (x, w) if b is None else (x, w, b)
    return _emit(out, inputs, bwd)


def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Normalize over all axes but the channel axis (axis 1; axis -1 for 2-d).

    running_mean / running_var are plain arrays mutated in place while
    training (biased variance, matching the batch statistics, so that a batch
    whose statistics equal the running ones produces identical train/infer
    outputs).
    """
    if x.ndim == 2:
        axes, pshape = (0,), (1, -1)
    elif x.ndim == 4:
        axes, pshape = (0, 2, 3), (1, -1, 1, 1)
    else:
        raise ShapeMismatchError(f"batchnorm expects 2-d or 4-d input, got {x.shape}")
    gam = gamma.data.reshape(pshape)
    bet = beta.data.reshape(pshape)
    xd = x.data
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean += momentum * (mu - running_mean)
        running_var += momentum * (var - running_var)
    else:
        mu = running_mean
        var = running_var
    inv = 1.0 / np.sqrt(var.reshape(pshape) + eps)
    xhat = (xd - mu.reshape(pshape)) * inv
    out = gam * xhat + bet

    def bwd(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        if not training:
            return g * gam * inv, dgamma, dbeta
        m = xd.size / xd.shape[1] if xd.ndim == 4 else xd.shape[0]
        dxhat = g * gam
        # standard batch-stat backward: mean and variance both depend on x
        dx = (dxhat - dxhat.mean(axis=axes).reshape(pshape)
              - xhat * (dxhat * xhat).sum(axis=axes).reshape(pshape) / m) * inv
        return dx, dgamma, dbeta

    return _emit(out, (x, gamma, beta), bwd)


def bce_with_logits(logits, target):
    """Mean binary cross-entropy on raw logits, numerically stable."""
    x = logits.data
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=DTYPE)
    if x.shape != t.shape:
        raise ShapeMismatchError(f"logits {x.shape} vs target {t.shape}")
    loss = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray(loss.mean())
    n = x.size

    def bwd(g):
        sig = np.empty_like(x)
        m = x >= 0
        sig[m] = 1.0 / (1.0 + np.exp(-x[m]))
        e = np.exp(x[~m])
        sig[~m] = e / (1.0 + e)
        return (g * (sig - t) / n,)

    return _emit(out, (logits,), bwd)
