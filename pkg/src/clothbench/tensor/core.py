"""Dense float64 tensors with taped reverse-mode automatic differentiation.

Every primitive evaluates eagerly on numpy arrays.  While a Tape is active
(``with Tape() as tape:``) each primitive appends one record; ``backward``
replays the records in reverse, visiting each node exactly once.  With no
active tape the same functions run as plain numpy, so inference pays no
bookkeeping cost.
"""

import numpy as np

DTYPE = np.float64


class ShapeMismatchError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class ContractError(ValueError):
    pass


_TAPES = []


class Tape:
    """Ordered record of primitive applications, innermost-active wins."""

    def __init__(self):
        self.records = []  # (out, inputs, backward_fn)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.records)


class Tensor:
    """Immutable-by-convention wrapper around a float64 ndarray.

    Optimizer steps are the single sanctioned writer of ``data`` and they run
    strictly between taped passes, never during one.
    """

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=DTYPE)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    # operator sugar; canonical API is the module-level functions
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _emit(data, inputs, bwd):
    if not np.isfinite(data).all():
        raise NonFiniteError("primitive produced a non-finite value")
    out = Tensor(data)
    if _TAPES:
        _TAPES[-1].records.append((out, inputs, bwd))
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given pre-broadcast shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and linear primitives


def add(a, b):
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _emit(data, (a, b), bwd)


def sub(a, b):
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _emit(data, (a, b), bwd)


def mul(a, b):
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _emit(data, (a, b), bwd)


def scale(a, c):
    c = float(c)
    data = a.data * c

    def bwd(g):
        return (g * c,)

    return _emit(data, (a,), bwd)


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _emit(data, (a, b), bwd)


def tanh(a):
    data = np.tanh(a.data)

    def bwd(g):
        return (g * (1.0 - data * data),)

    return _emit(data, (a,), bwd)


def relu(a):
    data = np.maximum(a.data, 0.0)
    pos = a.data > 0.0

    def bwd(g):
        return (g * pos,)

    return _emit(data, (a,), bwd)


def sigmoid(a):
    # split by sign to avoid overflow in exp
    x = a.data
    data = np.empty_like(x)
    m = x >= 0
    data[m] = 1.0 / (1.0 + np.exp(-x[m]))
    e = np.exp(x[~m])
    data[~m] = e / (1.0 + e)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _emit(data, (a,), bwd)


# ---------------------------------------------------------------------------
# structural primitives


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        pieces = []
        for i in range(len(sizes)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return _emit(data, tuple(tensors), bwd)


def slice_(a, key):
    """Basic (non-repeating) indexing; gradient scatters back into zeros."""
    data = a.data[key]
    shape = a.data.shape

    def bwd(g):
        da = np.zeros(shape, dtype=DTYPE)
        da[key] += g
        return (da,)

    return _emit(data, (a,), bwd)


def gather_rows(table, idx):
    """Select rows of a 2-d table by integer index; repeats accumulate."""
    idx = np.asarray(idx, dtype=np.intp)
    if table.ndim != 2:
        raise ShapeMismatchError("gather_rows expects a 2-d table")
    data = table.data[idx]
    shape = table.data.shape

    def bwd(g):
        dt = np.zeros(shape, dtype=DTYPE)
        np.add.at(dt, idx, g)
        return (dt,)

    return _emit(data, (table,), bwd)


def reshape(a, shape):
    data = a.data.reshape(shape)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old),)

    return _emit(data, (a,), bwd)


# ---------------------------------------------------------------------------
# reductions


def sum_sq(a):
    data = np.asarray(np.sum(a.data * a.data))
    ad = a.data

    def bwd(g):
        return (2.0 * g * ad,)

    return _emit(data, (a,), bwd)


def l2_norm(a):
    n = float(np.sqrt(np.sum(a.data * a.data)))
    ad = a.data

    def bwd(g):
        if n == 0.0:
            return (np.zeros_like(ad),)  # subgradient at the kink
        return (g * ad / n,)

    return _emit(np.asarray(n), (a,), bwd)


def mean_sq_err(pred, target):
    """Mean of squared differences over every element."""
    diff = sub(pred, target)
    return scale(sum_sq(diff), 1.0 / diff.size)


# ---------------------------------------------------------------------------
# backward pass


def backward(tape, loss, wrt):
    """Accumulate d(loss)/d(t) for every tensor in wrt.

    Parameters untouched by the taped computation get zero gradients.
    """
    if loss.size != 1:
        raise ContractError(f"loss must be scalar, got shape {loss.shape}")
    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bwd in reversed(tape.records):
        g = grads.get(id(out))
        if g is None:
            continue
        for t, gt in zip(inputs, bwd(g)):
            if gt is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = gt
    out = []
    for t in wrt:
        g = grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=DTYPE))
    return out
