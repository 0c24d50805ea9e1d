"""Dense float tensors with define-by-run reverse-mode differentiation.

A `Tape` records every operation whose inputs track gradients; `backward`
replays it in reverse to populate leaf gradients. Tensors are float32 by
default; building them from float64 arrays keeps float64, which is how the
gradient checker runs the whole graph at 64-bit.

Concurrency: a tape is confined to the thread that opened it. Tensors that
do not track gradients are immutable values and safe to share across
threads; parallel evaluation is allowed only across independent tapes.
"""

from __future__ import annotations

import itertools
import threading
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf, expit

from ..errors import (
    ContractError,
    DegenerateMaskError,
    DimensionError,
    NumericalError,
)

_node_ids = itertools.count()
_tls = threading.local()

# Ops with a registered backward rule; tests enumerate this to guarantee
# every rule is covered by a finite-difference check.
REGISTERED_OPS = (
    "matmul",
    "add",
    "mul",
    "relu",
    "gelu",
    "sigmoid",
    "tanh",
    "log",
    "clamp",
    "softmax",
    "layer_norm",
    "mean_over_axis",
    "tensor_sum",
    "concat_along_axis",
    "slice",
    "transpose",
    "reshape",
    "broadcast_to",
    "dropout",
)


def _active_tape() -> Optional["Tape"]:
    return getattr(_tls, "tape", None)


class Tape:
    """Ordered record of operations, topological by construction.

    Use as a context manager around a forward pass that will be
    differentiated. Nesting replaces the active tape for the inner block.
    """

    def __init__(self):
        self.entries: list[_TapeEntry] = []
        self.leaves: list[Tensor] = []
        self._leaf_ids: set[int] = set()
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _tls.tape = self
        return self

    def __exit__(self, *exc):
        _tls.tape = self._outer
        return False

    def _register_leaf(self, t: "Tensor"):
        if t.node_id not in self._leaf_ids and t.node_id not in self._produced:
            self._leaf_ids.add(t.node_id)
            self.leaves.append(t)

    def record(self, inputs: Sequence["Tensor"], output: "Tensor", backward: Callable):
        for t in inputs:
            if t.requires_grad:
                self._register_leaf(t)
        self._produced.add(output.node_id)
        self.entries.append(_TapeEntry(tuple(inputs), output.node_id, backward))


class _TapeEntry:
    __slots__ = ("inputs", "out_id", "backward")

    def __init__(self, inputs, out_id, backward):
        self.inputs = inputs
        self.out_id = out_id
        self.backward = backward


class Tensor:
    """Dense n-dimensional float array, optionally tracking gradients.

    `data` is row-major float32/float64; `grad` is populated by `backward`
    for gradient-tracking leaves. Values must be finite: any op producing
    NaN/Inf raises NumericalError.
    """

    __slots__ = ("data", "requires_grad", "grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise NumericalError("tensor values must be finite")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node_id = next(_node_ids)
        self.tape: Optional[Tape] = None
        if self.requires_grad:
            tape = _active_tape()
            if tape is not None:
                tape._register_leaf(self)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # Operator sugar; all of these defer to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return add(self, mul(other, -1.0))
        return add(self, -float(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), float(other))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return tensor_slice(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    """Wrap an op output, recording it when gradients are being traced."""
    if not np.all(np.isfinite(data)):
        raise NumericalError("operation produced non-finite values")
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = track
    out.grad = None
    out.node_id = next(_node_ids)
    out.tape = tape if track else None
    if track:
        tape.record(inputs, out, backward)
    return out


def _ascontig(a: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray promotes rank 0 to rank 1; 0-d is contiguous anyway
    return a if a.ndim == 0 else np.ascontiguousarray(a)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to `shape` after forward-pass broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_suffix_broadcast(a_shape: tuple, b_shape: tuple):
    """Elementwise ops allow equal shapes, a scalar operand, or one shape
    being a trailing suffix of the other; anything fancier is rejected to
    keep backward rules small."""
    if a_shape == b_shape:
        return
    small, big = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if not small:
        return
    if len(small) == len(big) or big[-len(small):] != small:
        raise DimensionError(f"shapes {a_shape} and {b_shape} are not elementwise-compatible")


# ---------------------------------------------------------------------------
# binary ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes; leading axes broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul requires rank >= 2 operands")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise DimensionError(f"matmul leading dims not broadcastable: {a.shape} x {b.shape}") from e
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _result(out, (a, b), backward)


def add(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return _result(a.data + np.asarray(c, dtype=a.data.dtype)[()], (a,), lambda g: (g,))
    b = _as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    a_shape, b_shape = a.shape, b.shape
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a_shape), _unbroadcast(g, b_shape)

    return _result(out, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a = _as_tensor(a)
    if isinstance(b, (int, float)):
        c = np.asarray(float(b), dtype=a.data.dtype)[()]
        return _result(a.data * c, (a,), lambda g: (g * c,))
    b = _as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    ad, bd = a.data, b.data

    def backward(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(ad * bd, (a, b), backward)


# ---------------------------------------------------------------------------
# elementwise unary ops


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    return _result(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def gelu(x: Tensor) -> Tensor:
    """Exact erf form: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = _as_tensor(x)
    xd = x.data
    cdf = (0.5 * (1.0 + erf(xd / np.sqrt(2.0)))).astype(xd.dtype)
    pdf = (np.exp(-0.5 * xd * xd) / np.sqrt(2.0 * np.pi)).astype(xd.dtype)
    return _result(xd * cdf, (x,), lambda g: (g * (cdf + xd * pdf),))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic 1 / (1 + exp(-x)), overflow-safe."""
    x = _as_tensor(x)
    s = expit(x.data).astype(x.data.dtype)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    t = np.tanh(x.data)
    return _result(t, (x,), lambda g: (g * (1.0 - t * t),))


def log(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    xd = x.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(xd)
    return _result(out, (x,), lambda g: (g / xd,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clip to [lo, hi]; gradient passes only through unclipped entries."""
    x = _as_tensor(x)
    xd = x.data
    inside = (xd >= lo) & (xd <= hi)
    return _result(np.clip(xd, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# normalization / reduction


def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Max-stabilized softmax along `axis`.

    `mask` (boolean, broadcastable to x) selects the entries that
    participate; masked entries are exactly 0 in the output and each slice
    must keep at least one unmasked entry.
    """
    x = _as_tensor(x)
    xd = x.data
    if mask is not None:
        m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
        m = np.broadcast_to(m.astype(bool), xd.shape)
        if not m.any(axis=axis).all():
            raise DegenerateMaskError("softmax slice is fully masked")
        z = np.where(m, xd, -np.inf)
        z = z - z.max(axis=axis, keepdims=True)
        e = np.where(m, np.exp(z), 0.0).astype(xd.dtype)
    else:
        z = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _result(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError("gamma/beta must match the last axis of x")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    gd = gamma.data
    out = xh * gd + beta.data

    def backward(g):
        dxh = g * gd
        dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True) - xh * (dxh * xh).mean(axis=-1, keepdims=True))
        dgamma = (g * xh).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta

    return _result(out, (x, gamma, beta), backward)


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    x = _as_tensor(x)
    n = x.shape[axis]
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape).copy(),)

    return _result(x.data.mean(axis=axis), (x,), backward)


def tensor_sum(x: Tensor) -> Tensor:
    """Sum of all entries (scalar output)."""
    x = _as_tensor(x)
    shape = x.shape
    dtype = x.data.dtype
    return _result(
        np.asarray(x.data.sum(), dtype=dtype),
        (x,),
        lambda g: (np.broadcast_to(g, shape).astype(dtype, copy=True),),
    )


# ---------------------------------------------------------------------------
# structural ops


def concat_along_axis(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty sequence")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise DimensionError(str(e)) from e
    ax = axis % out.ndim
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(_ascontig(p) for p in np.split(g, offsets, axis=ax))

    return _result(out, tensors, backward)


def tensor_slice(x: Tensor, key) -> Tensor:
    """Basic slicing (ints/slices/ellipsis); no fancy indexing."""
    x = _as_tensor(x)
    out = x.data[key]
    if isinstance(out, np.ndarray):
        out = out.copy()
    else:
        out = np.asarray(out)
    shape, dtype = x.shape, x.data.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        full[key] = g
        return (full,)

    return _result(out, (x,), backward)


def transpose(x: Tensor, axes=None) -> Tensor:
    x = _as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        _ascontig(np.transpose(x.data, axes)),
        (x,),
        lambda g: (_ascontig(np.transpose(g, inverse)),),
    )


def reshape(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(str(e)) from e
    return _result(_ascontig(out), (x,), lambda g: (_ascontig(g.reshape(old)),))


def broadcast_to(x: Tensor, shape) -> Tensor:
    x = _as_tensor(x)
    old = x.shape
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as e:
        raise DimensionError(str(e)) from e
    return _result(out, (x,), lambda g: (_unbroadcast(g, old),))


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate == 0."""
    if not 0.0 <= rate < 1.0:
        raise ContractError("dropout rate must be in [0, 1)")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.data.dtype)[()]
    return _result(x.data * keep * scale, (x,), lambda g: (g * keep * scale,))


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Tensor):
    """Reverse-topological gradient accumulation from a recorded scalar.

    Populates `.grad` on every gradient-tracking leaf seen by the tape;
    leaves the loss does not depend on get exact zeros. Gradients are
    assigned (not accumulated across calls); run one backward per tape.
    """
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ContractError("backward requires a scalar loss tensor")
    tape = loss.tape
    if tape is None or not tape.entries:
        raise ContractError("loss was not recorded on an active tape")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.out_id, None)
        if g is None:
            continue
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            if gi.shape != t.shape:
                gi = gi.reshape(t.shape)
            acc = grads.get(t.node_id)
            grads[t.node_id] = gi if acc is None else acc + gi
    for leaf in tape.leaves:
        g = grads.get(leaf.node_id)
        leaf.grad = np.zeros_like(leaf.data) if g is None else np.asarray(g, dtype=leaf.data.dtype)
        if not np.all(np.isfinite(leaf.grad)):
            raise NumericalError("backward produced non-finite gradients")
