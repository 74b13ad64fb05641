"""Minimal reverse-mode autodiff over float32 numpy arrays.

Just enough operations to express the encoder-decoder segmentation network and
its losses: stride-1 same-padding conv2d, relu, channel softmax, elementwise
arithmetic, channel concat, 2x2 maxpool, nearest 2x upsample, inverted
dropout, full reductions and clamping. Arrays are rank 3 (C,H,W) or rank 4
(N,C,H,W); the channel axis is always axis -3. No broadcasting: elementwise
operands must match shapes exactly.
"""

from __future__ import annotations

import threading
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import GraphConsumedError, NumericError, ShapeError

_scratch = threading.local()


def _scratch_buffer(tag: str, shape: tuple[int, ...]) -> np.ndarray:
    """Reused per-thread float32 work buffer (conv column matrices are large
    and short-lived; reallocating them every call dominates conv runtime)."""
    cache = getattr(_scratch, "cache", None)
    if cache is None:
        cache = _scratch.cache = {}
    key = (tag, shape)
    buf = cache.get(key)
    if buf is None:
        buf = cache[key] = np.empty(shape, dtype=np.float32)
    return buf


class OpKind(Enum):
    CONV2D = "conv2d"
    RELU = "relu"
    SOFTMAX_OVER_CHANNEL = "softmax_over_channel"
    LOG = "log"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    SCALAR_MUL = "scalar_mul"
    CONCAT_CHANNEL = "concat_channel"
    MAXPOOL2X2 = "maxpool2x2"
    UPSAMPLE_NEAREST2X = "upsample_nearest2x"
    DROPOUT = "dropout"
    REDUCE_MEAN = "reduce_mean"
    REDUCE_SUM = "reduce_sum"
    CLAMP = "clamp"


class Tensor:
    """Float32 array with an optional gradient buffer.

    `grad` exists iff `requires_grad`; it accumulates across backward passes
    and is zeroed by `sgd_step`.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def scalar(value: float) -> Tensor:
    return Tensor(np.float32(value))


# A backward rule maps (output grad, per-input need flags) to per-input grads
# (None where not needed).
_BackwardFn = Callable[[np.ndarray, tuple[bool, ...]], list]


class _Record:
    __slots__ = ("kind", "inputs", "output", "bwd")

    def __init__(self, kind: OpKind, inputs: tuple[Tensor, ...], output: Tensor, bwd: _BackwardFn):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.bwd = bwd


class Graph:
    """Ordered record of executed operations; reverse traversal drives backward().

    A graph and its tensors belong to a single thread. With `recording=False`
    the forward math still runs but nothing is retained (no backward possible).
    """

    def __init__(self, recording: bool = True):
        self.recording = recording
        self.consumed = False
        self._records: list[_Record] = []
        # ids of tensors that lie on a path from a requires_grad leaf
        self._on_path: set[int] = set()

    def __len__(self) -> int:
        return len(self._records)

    def _needs(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._on_path

    def apply(self, kind: OpKind, inputs: Sequence[Tensor], **attrs) -> Tensor:
        fwd = _FORWARD[kind]
        # ops on non-recording graphs may reuse scratch buffers: nothing holds
        # onto their intermediates for a later backward
        _scratch.transient = not self.recording
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out_data, bwd = fwd(tuple(inputs), attrs)
        if not np.isfinite(out_data).all():
            raise NumericError(f"non-finite values produced by {kind.value}")
        out = Tensor(out_data)
        if self.recording:
            self._records.append(_Record(kind, tuple(inputs), out, bwd))
            if any(self._needs(t) for t in inputs):
                self._on_path.add(id(out))
        return out

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise GraphConsumedError("graph already consumed by a previous backward()")
        if loss.data.ndim != 0:
            raise ShapeError(f"backward() needs a scalar loss, got shape {loss.data.shape}")
        self.consumed = True
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float32)}
        for rec in reversed(self._records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            needs = tuple(self._needs(t) for t in rec.inputs)
            if not any(needs):
                continue
            for t, gi in zip(rec.inputs, rec.bwd(g, needs)):
                if gi is None:
                    continue
                if t.requires_grad:
                    t.grad += gi
                elif id(t) in self._on_path:
                    acc = grads.get(id(t))
                    if acc is None:
                        grads[id(t)] = gi
                    else:
                        acc += gi


def sgd_step(weights: Sequence[Tensor], lr: float) -> None:
    """w <- w - lr * grad for every parameter, then zero the grads."""
    for w in weights:
        if w.grad is None:
            raise ValueError("sgd_step on a tensor without a gradient buffer")
        w.data -= np.float32(lr) * w.grad
        w.grad[...] = 0.0


# ---------------------------------------------------------------------------
# forward builders: (inputs, attrs) -> (out_data, backward_fn)
# ---------------------------------------------------------------------------


def _as4d(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected rank 3 or 4 array, got shape {x.shape}")


def _conv2d(inputs, attrs):
    x_t, w_t, b_t = inputs
    x4, squeezed = _as4d(x_t.data)
    w, b = w_t.data, b_t.data
    if w.ndim != 4:
        raise ShapeError(f"conv2d kernel must be rank 4, got {w.shape}")
    co, ci, kh, kw = w.shape
    n, c, h, wd = x4.shape
    if ci != c:
        raise ShapeError(f"conv2d channel mismatch: input {c}, kernel expects {ci}")
    if b.shape != (co,):
        raise ShapeError(f"conv2d bias must have shape ({co},), got {b.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError("conv2d supports odd kernel sizes only (same padding)")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x4, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x4
    # column buffer (C, kh, kw, N, H, W): built by cheap row-contiguous slice
    # copies, reshaped to one (C*kh*kw, N*H*W) GEMM operand
    cshape = (c, kh, kw, n, h, wd)
    if getattr(_scratch, "transient", False):
        cols = _scratch_buffer("cols", cshape)
    else:
        cols = np.empty(cshape, dtype=np.float32)
    xm = np.moveaxis(xp, 1, 0)  # (C, N, Hp, Wp) view
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xm[:, :, i:i + h, j:j + wd]
    cmat = cols.reshape(c * kh * kw, n * h * wd)
    wmat = w.reshape(co, c * kh * kw)
    out = wmat @ cmat + b[:, None]
    out = np.ascontiguousarray(np.moveaxis(out.reshape(co, n, h, wd), 0, 1))
    if squeezed:
        out = out[0]

    def bwd(g, needs):
        g4 = g[None] if squeezed else g
        gmat = np.ascontiguousarray(np.moveaxis(g4, 1, 0)).reshape(co, n * h * wd)
        gx = gw = gb = None
        if needs[1]:
            gw = (gmat @ cmat.T).reshape(co, ci, kh, kw)
        if needs[2]:
            gb = gmat.sum(axis=1)
        if needs[0]:
            gcols = (wmat.T @ gmat).reshape(c, kh, kw, n, h, wd)
            gxp = np.zeros_like(xm)  # (C, N, Hp, Wp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + h, j:j + wd] += gcols[:, i, j]
            gx = np.moveaxis(gxp, 0, 1)[:, :, ph:ph + h, pw:pw + wd]
            gx = np.ascontiguousarray(gx)
            if squeezed:
                gx = gx[0]
        return [gx, gw, gb]

    return out, bwd


def _relu(inputs, attrs):
    x = inputs[0].data
    out = np.maximum(x, 0.0)

    def bwd(g, needs):
        return [g * (x > 0.0)]

    return out, bwd


def _softmax_over_channel(inputs, attrs):
    x = inputs[0].data
    if x.ndim < 3:
        raise ShapeError(f"softmax_over_channel needs a channel axis, got shape {x.shape}")
    m = x.max(axis=-3, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=-3, keepdims=True)

    def bwd(g, needs):
        dot = (g * out).sum(axis=-3, keepdims=True)
        return [out * (g - dot)]

    return out, bwd


def _log(inputs, attrs):
    x = inputs[0].data
    if x.size and x.min() <= 0.0:
        raise NumericError("log of non-positive input; clamp first")
    out = np.log(x)

    def bwd(g, needs):
        return [g / x]

    return out, bwd


def _check_same_shape(a: Tensor, b: Tensor, kind: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"{kind} shape mismatch: {a.data.shape} vs {b.data.shape}")


def _add(inputs, attrs):
    a, b = inputs
    _check_same_shape(a, b, "add")
    out = a.data + b.data

    def bwd(g, needs):
        return [g if needs[0] else None, g if needs[1] else None]

    return out, bwd


def _sub(inputs, attrs):
    a, b = inputs
    _check_same_shape(a, b, "sub")
    out = a.data - b.data

    def bwd(g, needs):
        return [g if needs[0] else None, -g if needs[1] else None]

    return out, bwd


def _mul(inputs, attrs):
    a, b = inputs
    _check_same_shape(a, b, "mul")
    out = a.data * b.data

    def bwd(g, needs):
        return [g * b.data if needs[0] else None, g * a.data if needs[1] else None]

    return out, bwd


def _div(inputs, attrs):
    a, b = inputs
    _check_same_shape(a, b, "div")
    out = a.data / b.data

    def bwd(g, needs):
        ga = g / b.data if needs[0] else None
        gb = -g * out / b.data if needs[1] else None
        return [ga, gb]

    return out, bwd


def _scalar_mul(inputs, attrs):
    x = inputs[0].data
    c = np.float32(attrs["c"])
    out = x * c

    def bwd(g, needs):
        return [g * c]

    return out, bwd


def _concat_channel(inputs, attrs):
    datas = [t.data for t in inputs]
    ndim = datas[0].ndim
    for d in datas:
        if d.ndim != ndim:
            raise ShapeError("concat_channel inputs must share rank")
    out = np.concatenate(datas, axis=-3)
    sizes = [d.shape[-3] for d in datas]

    def bwd(g, needs):
        grads, start = [], 0
        for sz, need in zip(sizes, needs):
            piece = np.take(g, range(start, start + sz), axis=-3) if need else None
            grads.append(piece)
            start += sz
        return grads

    return out, bwd


def _maxpool2x2(inputs, attrs):
    x = inputs[0].data
    *lead, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    blocks = x.reshape(*lead, h // 2, 2, w // 2, 2)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def bwd(g, needs):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gb = np.moveaxis(gb.reshape(*lead, h // 2, w // 2, 2, 2), -2, -3)
        return [gb.reshape(x.shape)]

    return np.ascontiguousarray(out), bwd


def _upsample_nearest2x(inputs, attrs):
    x = inputs[0].data
    out = np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1)
    *lead, h, w = x.shape

    def bwd(g, needs):
        return [g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1))]

    return out, bwd


def _dropout(inputs, attrs):
    x = inputs[0].data
    p = float(attrs["p"])
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p must lie in [0, 1), got {p}")
    stream = attrs.get("stream")
    streams = attrs.get("streams")
    if stream is None and streams is None:
        raise ValueError("dropout requires an RNG stream handle")
    if streams is not None:
        if x.ndim != 4 or len(streams) != x.shape[0]:
            raise ShapeError("per-row dropout streams must match the batch dimension")
        u = np.stack([s.uniform32(x.shape[1:]) for s in streams])
    else:
        u = stream.uniform32(x.shape)
    # inverted dropout: drop with probability p, scale survivors by 1/(1-p)
    mask = (u >= p).astype(np.float32) / np.float32(1.0 - p)
    out = x * mask

    def bwd(g, needs):
        return [g * mask]

    return out, bwd


def _reduce_mean(inputs, attrs):
    x = inputs[0].data
    out = np.float32(x.mean(dtype=np.float32))
    inv = np.float32(1.0 / x.size)

    def bwd(g, needs):
        return [np.full(x.shape, g * inv, dtype=np.float32)]

    return np.asarray(out), bwd


def _reduce_sum(inputs, attrs):
    x = inputs[0].data
    out = np.asarray(np.float32(x.sum(dtype=np.float32)))

    def bwd(g, needs):
        return [np.full(x.shape, g, dtype=np.float32)]

    return out, bwd


def _clamp(inputs, attrs):
    x = inputs[0].data
    lo, hi = np.float32(attrs["lo"]), np.float32(attrs["hi"])
    if not lo < hi:
        raise ValueError(f"clamp needs lo < hi, got [{lo}, {hi}]")
    out = np.clip(x, lo, hi)

    def bwd(g, needs):
        return [g * ((x > lo) & (x < hi))]

    return out, bwd


_FORWARD = {
    OpKind.CONV2D: _conv2d,
    OpKind.RELU: _relu,
    OpKind.SOFTMAX_OVER_CHANNEL: _softmax_over_channel,
    OpKind.LOG: _log,
    OpKind.ADD: _add,
    OpKind.SUB: _sub,
    OpKind.MUL: _mul,
    OpKind.DIV: _div,
    OpKind.SCALAR_MUL: _scalar_mul,
    OpKind.CONCAT_CHANNEL: _concat_channel,
    OpKind.MAXPOOL2X2: _maxpool2x2,
    OpKind.UPSAMPLE_NEAREST2X: _upsample_nearest2x,
    OpKind.DROPOUT: _dropout,
    OpKind.REDUCE_MEAN: _reduce_mean,
    OpKind.REDUCE_SUM: _reduce_sum,
    OpKind.CLAMP: _clamp,
}
