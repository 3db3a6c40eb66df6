"""Dense float tensors with reverse-mode differentiation.

Implements exactly the operations the sentence-pair graph needs: batched
matmul, masked softmax, masked max pooling, dropout, layer norm and a
stabilized cross-entropy, each with an analytic backward. Storage and
compute default to float32; float64 tensors are supported so tests can run
high-precision shadows of the same graph.

Tensors produced by an op are treated as immutable. Gradients never
accumulate silently across steps: ``backward`` refuses to run if any leaf
it reaches still carries a gradient, so callers must ``zero_grad`` between
steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    ContractError,
    EmptySequenceError,
    GradientStateError,
    LabelError,
    NumericError,
    ShapeError,
)

DEFAULT_DTYPE = np.float32

# Additive penalty for masked softmax keys. Large enough that exp() of a
# masked score underflows against any live score, small enough to stay
# finite in float32.
_MASK_PENALTY = 1e9


class Tensor:
    """A dense n-d array plus the graph edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_backward_done")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if not np.isfinite(arr).all():
            raise NumericError("tensor contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def is_leaf(self):
        return not self._parents

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar for the handful of binary ops used pervasively.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


@dataclass
class RngState:
    """Counter-based random stream: identical (seed, counter) -> identical draws.

    Uses the splitmix64 finalizer on (seed, index) so draws are bitwise
    reproducible across runs and independent of numpy's global state.
    """

    seed: int
    counter: int = 0

    _GOLDEN = np.uint64(0x9E3779B97F4A7C15)

    def uniform(self, shape=()):
        """Draw floats in [0, 1), advancing the counter by the element count."""
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            x = (np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF)) + idx * self._GOLDEN
            z = _mix64(x)
        out = (z >> np.uint64(11)).astype(np.float64) * (2.0 ** -53)
        return out.reshape(shape) if shape else float(out[0])

    def clone(self):
        return RngState(self.seed, self.counter)


def _mix64(x):
    with np.errstate(over="ignore"):
        x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return x ^ (x >> np.uint64(31))


def derive_seed(seed, *tags):
    """Fold string/int tags into a seed, deterministically across runs."""
    x = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    for tag in tags:
        if isinstance(tag, str):
            for b in tag.encode("utf-8"):
                x = _mix64(x ^ np.uint64(b))
        else:
            x = _mix64(x ^ np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF))
    return int(x)


def _as_tensor(x, dtype=None):
    return x if isinstance(x, Tensor) else Tensor(x, dtype=dtype)


def _make(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    arr = np.asarray(data)
    if not np.isfinite(arr).all():
        raise NumericError("operation produced NaN or Inf")
    out.data = arr
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out._parents = tuple(parents) if out.requires_grad else ()
    out._backward = backward_fn if out.requires_grad else None
    out._backward_done = False
    return out


def _accumulate(tensor, g):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += g.astype(tensor.data.dtype, copy=False)


def _unbroadcast(g, shape):
    """Sum gradient over axes that were broadcast in the forward pass."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss):
    """Populate .grad on every requires_grad ancestor of a scalar loss.

    Raises GradientStateError on a second call for the same loss, or when a
    reachable leaf still holds gradients from a previous step.
    """
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if loss._backward_done:
        raise GradientStateError("backward already ran for this loss; rebuild the graph")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in topo:
        if node.is_leaf() and node.requires_grad and node.grad is not None:
            raise GradientStateError("stale gradients present; call zero_grad before backward")

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)
    loss._backward_done = True


def zero_grad(tensors):
    for t in tensors:
        t.zero_grad()


# ---------------------------------------------------------------------------
# elementwise / structural ops


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), back)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), back)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), back)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)

    def back(g):
        _accumulate(a, g * c)

    return _make(a.data * np.asarray(c, dtype=a.data.dtype), (a,), back)


def abs_(a):
    a = _as_tensor(a)

    def back(g):
        _accumulate(a, g * np.sign(a.data))

    return _make(np.abs(a.data), (a,), back)


def relu(a):
    a = _as_tensor(a)
    keep = a.data > 0

    def back(g):
        _accumulate(a, g * keep)

    return _make(np.where(keep, a.data, 0), (a,), back)


def reshape(a, shape):
    a = _as_tensor(a)

    def back(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _make(a.data.reshape(shape), (a,), back)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), back)


def concat(tensors, axis=-1):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            _accumulate(t, piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def take_index(a, index, axis):
    """Select one slice along an axis, dropping that axis (e.g. the cls position)."""
    a = _as_tensor(a)
    index = int(index)

    def back(g):
        full = np.zeros_like(a.data)
        sl = [slice(None)] * a.data.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        _accumulate(a, full)

    return _make(np.take(a.data, index, axis=axis), (a,), back)


def sum_(a):
    a = _as_tensor(a)

    def back(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(a.data.sum(), (a,), back)


def mean_(a):
    a = _as_tensor(a)
    n = a.data.size

    def back(g):
        _accumulate(a, np.broadcast_to(g / n, a.data.shape).copy())

    return _make(a.data.mean(), (a,), back)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError as e:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}") from e

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.data.shape))
        _accumulate(b, _unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), back)


def linear(x, w, b):
    """x @ w + b with bias broadcast over leading dims."""
    return add(matmul(x, w), b)


# ---------------------------------------------------------------------------
# masked sequence ops


def _key_mask_array(key_mask, logits_data):
    m = key_mask.data if isinstance(key_mask, Tensor) else np.asarray(key_mask)
    if m.shape[-1] != logits_data.shape[-1]:
        raise ShapeError(
            f"masked_softmax: key mask {m.shape} does not cover keys of {logits_data.shape}"
        )
    m = m.astype(logits_data.dtype, copy=False)
    if m.ndim < logits_data.ndim:
        # insert the query axis so the mask broadcasts across rows
        m = np.expand_dims(m, axis=-2)
    return m


def masked_softmax(logits, key_mask):
    """Softmax over the last axis restricted to unmasked keys.

    Masked keys receive exactly 0. A fully masked key set yields an all-zero
    row rather than NaN, so padded query positions propagate zeros.
    """
    logits = _as_tensor(logits)
    mask = _key_mask_array(key_mask, logits.data)
    z = logits.data + (1.0 - mask) * (-_MASK_PENALTY)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z) * mask
    denom = e.sum(axis=-1, keepdims=True)
    out_data = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def back(g):
        dot = (g * out_data).sum(axis=-1, keepdims=True)
        _accumulate(logits, out_data * (g - dot))

    return _make(out_data, (logits,), back)


def masked_max_pool(seq, mask):
    """Per-feature max over unmasked positions of seq[..., L, D]."""
    seq = _as_tensor(seq)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if m.shape != seq.data.shape[:-1]:
        raise ShapeError(f"masked_max_pool: mask {m.shape} vs sequence {seq.data.shape}")
    live = m > 0
    if not live.any(axis=-1).all():
        raise EmptySequenceError("masked_max_pool: a sequence has no unmasked positions")
    filled = np.where(live[..., None], seq.data, -np.inf)
    idx = np.argmax(filled, axis=-2)
    out_data = np.take_along_axis(seq.data, idx[..., None, :], axis=-2).squeeze(-2)

    def back(g):
        full = np.zeros_like(seq.data)
        np.put_along_axis(full, idx[..., None, :], g[..., None, :], axis=-2)
        _accumulate(seq, full)

    return _make(out_data, (seq,), back)


def dropout(x, rate, rng, training):
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.uniform(x.data.shape) >= rate).astype(x.data.dtype)
    keep /= np.asarray(1.0 - rate, dtype=x.data.dtype)

    def back(g):
        _accumulate(x, g * keep)

    return _make(x.data * keep, (x,), back)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize over the last axis with learnable gain and bias."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.data.dtype))
    xn = xc * inv
    out_data = xn * gain.data + bias.data

    def back(g):
        red = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xn).sum(axis=red))
        _accumulate(bias, g.sum(axis=red))
        dxn = g * gain.data
        gx = inv * (
            dxn
            - dxn.mean(axis=-1, keepdims=True)
            - xn * (dxn * xn).mean(axis=-1, keepdims=True)
        )
        _accumulate(x, gx)

    return _make(out_data, (x, gain, bias), back)


def cross_entropy(logits, gold):
    """Mean of -log softmax(logits)[gold] over all leading dims.

    ``gold`` is an int or an int array matching the leading dims of
    ``logits``; values must index the last axis.
    """
    logits = _as_tensor(logits)
    n_classes = logits.data.shape[-1]
    gold_arr = np.asarray(gold, dtype=np.int64)
    if gold_arr.shape != logits.data.shape[:-1]:
        raise ContractError(
            f"cross_entropy: gold shape {gold_arr.shape} vs logits {logits.data.shape}"
        )
    if gold_arr.size and (gold_arr.min() < 0 or gold_arr.max() >= n_classes):
        raise LabelError(f"gold class index outside [0, {n_classes})")

    mx = logits.data.max(axis=-1, keepdims=True)
    z = logits.data - mx
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True)) + mx
    picked = np.take_along_axis(logits.data, gold_arr[..., None], axis=-1)
    nll = (lse - picked).squeeze(-1)
    n = max(nll.size, 1)
    out_data = np.asarray(nll.mean() if nll.size else 0.0, dtype=logits.data.dtype)

    def back(g):
        p = np.exp(logits.data - lse)
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, gold_arr[..., None], 1.0, axis=-1)
        _accumulate(logits, (p - onehot) * (g / n))

    return _make(out_data, (logits,), back)
