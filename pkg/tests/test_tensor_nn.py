"""Convolution, transposed convolution, batchnorm, BCE: values and gradients."""

import numpy as np
import pytest

from clothbench import tensor as T


def rng():
    return np.random.default_rng(7)


def conv_reference(x, w, b, stride, pad):
    """Brute-force direct convolution, the independent oracle."""
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((n, f, oh, ow))
    for ni in range(n):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[ni, fi, i, j] = np.sum(patch * w[fi]) + (b[fi] if b is not None else 0.0)
    return out


def test_conv2d_ones_literal():
    # all-ones 5x5 input, all-ones 3x3 kernel, stride 2 pad 1:
    # each output counts the in-bounds window cells
    x = T.Tensor(np.ones((1, 1, 5, 5)))
    w = T.Tensor(np.ones((1, 1, 3, 3)))
    y = T.conv2d(x, w)
    assert y.shape == (1, 1, 3, 3)
    assert np.allclose(y.data[0, 0], [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv2d_matches_direct_convolution():
    r = rng()
    x = r.normal(size=(2, 3, 5, 7))
    w = r.normal(size=(4, 3, 3, 3))
    b = r.normal(size=4)
    y = T.conv2d(T.Tensor(x), T.Tensor(w), T.Tensor(b))
    assert np.allclose(y.data, conv_reference(x, w, b, 2, 1), atol=1e-12)


def test_conv2d_channel_mismatch():
    with pytest.raises(T.ShapeMismatchError):
        T.conv2d(T.Tensor(np.ones((1, 2, 4, 4))), T.Tensor(np.ones((3, 5, 3, 3))))


def test_grad_conv2d():
    r = rng()
    x = T.Tensor(r.normal(size=(2, 2, 6, 6)))
    w = T.Tensor(r.normal(size=(3, 2, 3, 3)))
    b = T.Tensor(r.normal(size=3))
    err = T.gradient_check(lambda x, w, b: T.sum_sq(T.conv2d(x, w, b)), [x, w, b], rng=rng())
    assert err < 1e-6


def test_deconv2d_doubles_spatial_dims():
    y = T.deconv2d(T.Tensor(np.ones((1, 4, 3, 4))), T.Tensor(np.ones((4, 2, 3, 3))))
    assert y.shape == (1, 2, 6, 8)


def test_deconv2d_is_conv_transpose():
    # inner-product identity <conv(x), y> == <x, deconv(y)> for matching weights
    r = rng()
    x = r.normal(size=(1, 2, 8, 8))
    w = r.normal(size=(3, 2, 3, 3))
    y = r.normal(size=(1, 3, 4, 4))
    cx = T.conv2d(T.Tensor(x), T.Tensor(w)).data
    # geometry with out_pad=1 maps (4,4)->(8,8); weight layout (C_in,F,k,k)=(3,2,3,3)
    dy = T.deconv2d(T.Tensor(y), T.Tensor(w), out_pad=1)
    assert dy.shape == (1, 2, 8, 8)
    assert np.isclose(np.sum(cx * y), np.sum(x * dy.data), rtol=1e-10)


def test_grad_deconv2d():
    r = rng()
    x = T.Tensor(r.normal(size=(2, 3, 3, 4)))
    w = T.Tensor(r.normal(size=(3, 2, 3, 3)))
    b = T.Tensor(r.normal(size=2))
    err = T.gradient_check(lambda x, w, b: T.sum_sq(T.deconv2d(x, w, b)), [x, w, b], rng=rng())
    assert err < 1e-6


def test_batchnorm_train_stats_and_infer_equality():
    r = rng()
    x = r.normal(loc=3.0, scale=2.0, size=(16, 5))
    gamma = T.Tensor(r.normal(size=5))
    beta = T.Tensor(r.normal(size=5))
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    y_train = T.batchnorm(T.Tensor(x), gamma, beta, mu.copy(), var.copy(), training=True)
    # with running stats equal to the batch stats, inference must match training
    y_infer = T.batchnorm(T.Tensor(x), gamma, beta, mu.copy(), var.copy(), training=False)
    assert np.allclose(y_train.data, y_infer.data, atol=1e-12)
    # normalized pre-scale output has zero mean, unit variance per feature
    xhat = (y_train.data - beta.data) / gamma.data
    assert np.allclose(xhat.mean(axis=0), 0.0, atol=1e-10)
    assert np.allclose(xhat.var(axis=0), var / (var + 1e-5), atol=1e-10)


def test_batchnorm_updates_running_stats():
    r = rng()
    x = r.normal(loc=1.0, size=(32, 3))
    rm = np.zeros(3)
    rv = np.ones(3)
    T.batchnorm(T.Tensor(x), T.Tensor(np.ones(3)), T.Tensor(np.zeros(3)), rm, rv,
                training=True, momentum=0.1)
    assert np.allclose(rm, 0.1 * x.mean(axis=0))
    assert np.allclose(rv, 0.9 + 0.1 * x.var(axis=0))


def test_grad_batchnorm_train_and_infer():
    r = rng()
    for shape in [(8, 4), (4, 3, 5, 6)]:
        nch = shape[1]
        x = T.Tensor(r.normal(size=shape))
        gamma = T.Tensor(r.normal(size=nch) + 2.0)
        beta = T.Tensor(r.normal(size=nch))
        rm = r.normal(size=nch)
        rv = r.uniform(0.5, 2.0, size=nch)

        def f_train(x, gamma, beta):
            return T.sum_sq(T.batchnorm(x, gamma, beta, rm.copy(), rv.copy(),
                                        training=True, momentum=0.0))

        def f_infer(x, gamma, beta):
            return T.sum_sq(T.batchnorm(x, gamma, beta, rm, rv, training=False))

        assert T.gradient_check(f_train, [x, gamma, beta], rng=rng()) < 1e-6
        assert T.gradient_check(f_infer, [x, gamma, beta], rng=rng()) < 1e-6


def test_bce_matches_naive_formula():
    r = rng()
    logits = r.normal(size=(4, 6))
    targets = (r.uniform(size=(4, 6)) > 0.5).astype(float)
    p = 1.0 / (1.0 + np.exp(-logits))
    naive = -(targets * np.log(p) + (1 - targets) * np.log(1 - p)).mean()
    got = T.bce_with_logits(T.Tensor(logits), T.Tensor(targets)).item()
    assert np.isclose(got, naive, rtol=1e-10)


def test_bce_extreme_logits_stable():
    logits = T.Tensor(np.array([[800.0, -800.0]]))
    targets = T.Tensor(np.array([[1.0, 0.0]]))
    assert T.bce_with_logits(logits, targets).item() < 1e-12


def test_grad_bce():
    r = rng()
    logits = T.Tensor(r.normal(size=(3, 5)))
    targets = T.Tensor((r.uniform(size=(3, 5)) > 0.4).astype(float))
    err = T.gradient_check(lambda l: T.bce_with_logits(l, targets), [logits], rng=rng())
    assert err < 1e-6
