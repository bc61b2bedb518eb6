"""Differentiable ops used by the network and the losses (NCHW layout)."""

from collections.abc import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rainsar.errors import ShapeMismatch
from rainsar.nn.tensor import Tensor, as_tensor

_CONV_BACKEND = {"name": "reference"}


def set_conv_backend(name: str) -> None:
    """``reference`` (vectorized numpy) or ``numba`` (parallel loop kernel) for conv2d forward.

    Both sum every output element over (c, a, b) in the same order, so
    their results are bit-identical for a given dtype.
    """
    if name not in ("reference", "numba"):
        raise ValueError(f"Unknown conv backend {name!r}")
    _CONV_BACKEND["name"] = name


# --- elementwise ---
def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return Tensor.from_op(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: x.accumulate(g * pos))


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    e = np.exp(d[~pos])
    out[~pos] = e / (1.0 + e)
    return Tensor.from_op(out, (x,), lambda g: x.accumulate(g * out * (1.0 - out)))


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0.0, x.data).astype(x.dtype)
    s = sigmoid(x.detach()).data
    return Tensor.from_op(out, (x,), lambda g: x.accumulate(g * s))


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: x.accumulate(g / x.data))


def square(x: Tensor) -> Tensor:
    return Tensor.from_op(x.data * x.data, (x,), lambda g: x.accumulate(2.0 * g * x.data))


def sqrt(x: Tensor) -> Tensor:
    """Square root with a zero subgradient at 0."""
    out = np.sqrt(x.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        x.accumulate(np.where(out > 0, g / (2.0 * safe), 0.0))

    return Tensor.from_op(out, (x,), backward)


def abs(x: Tensor) -> Tensor:  # noqa: A001
    return Tensor.from_op(np.abs(x.data), (x,), lambda g: x.accumulate(g * np.sign(x.data)))


# --- structural ---
def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = [t.shape for t in tensors]
    ref = list(shapes[0])
    for s in shapes[1:]:
        if len(s) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(s, ref)) if i != axis % len(ref)):
            raise ShapeMismatch(f"concat: incompatible shapes {shapes} along axis {axis}")
    sizes = np.cumsum([s[axis] for s in shapes])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, sizes, axis=axis)):
            t.accumulate(part)

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def broadcast_scalar_to_map(s: Tensor, height: int, width: int) -> Tensor:
    """[N, C] scalars -> [N, C, H, W] constant maps."""
    if s.ndim != 2:
        raise ShapeMismatch(f"broadcast_scalar_to_map expects [N, C], got {s.shape}")
    out = np.broadcast_to(s.data[:, :, None, None], (*s.shape, height, width)).copy()
    return Tensor.from_op(out, (s,), lambda g: s.accumulate(g.sum(axis=(2, 3))))


# --- convolution ---
def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_reference(xp: np.ndarray, w: np.ndarray, stride: int, ho: int, wo: int) -> np.ndarray:
    """Valid cross-correlation of a padded input, accumulated term by term in (c, a, b) order."""
    w = w.astype(xp.dtype, copy=False)
    out = np.zeros((xp.shape[0], w.shape[0], ho, wo), dtype=xp.dtype)
    for ci in range(w.shape[1]):
        for a in range(w.shape[2]):
            for bb in range(w.shape[3]):
                patch = xp[:, ci, a : a + stride * (ho - 1) + 1 : stride, bb : bb + stride * (wo - 1) + 1 : stride]
                out += patch[:, None] * w[None, :, ci, a, bb, None, None]
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation: out[n,o,i,j] = sum_{c,a,b} x[n,c,i*s+a,j*s+b] * w[o,c,a,b] + b[o]."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeMismatch(f"conv2d: input has {c} channels, weight expects {cw}")
    if h + 2 * padding < kh or wd + 2 * padding < kw:
        raise ShapeMismatch(f"conv2d: {kh}x{kw} kernel does not fit {h}x{wd} input with padding {padding}")
    xp = _pad(x.data, padding)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = windows.shape[2], windows.shape[3]

    if _CONV_BACKEND["name"] == "numba":
        from rainsar.nn.kernels import conv2d_forward

        out = conv2d_forward(np.ascontiguousarray(xp), np.ascontiguousarray(w.data), stride, ho, wo)
    else:
        out = conv2d_reference(xp, w.data, stride, ho, wo)
    if b is not None:
        out = out + b.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        if w.requires_grad:
            w.accumulate(np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dwin = np.tensordot(g, w.data, axes=([1], [0]))  # [N, Ho, Wo, C, kh, kw]
            dxp = np.zeros_like(xp)
            for a in range(kh):
                for bb in range(kw):
                    dxp[:, :, a : a + stride * ho : stride, bb : bb + stride * wo : stride] += dwin[
                        :, :, :, :, a, bb
                    ].transpose(0, 3, 1, 2)
            x.accumulate(dxp[:, :, padding : padding + h, padding : padding + wd])

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 2) -> Tensor:
    """Transposed convolution with weight [Cin, Cout, k, k]; output (H-1)*s + k."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv_transpose2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    cw, o, kh, kw = w.shape
    if c != cw:
        raise ShapeMismatch(f"conv_transpose2d: input has {c} channels, weight expects {cw}")
    wx = w.data.astype(x.dtype, copy=False)
    # summed channel by channel in index order
    cols = np.zeros((n, h, wd, o, kh, kw), dtype=x.dtype)
    for ci in range(c):
        cols += x.data[:, ci, :, :, None, None, None] * wx[ci]
    out = np.zeros((n, o, (h - 1) * stride + kh, (wd - 1) * stride + kw), dtype=x.dtype)
    for a in range(kh):
        for bb in range(kw):
            out[:, :, a : a + stride * h : stride, bb : bb + stride * wd : stride] += cols[..., a, bb].transpose(
                0, 3, 1, 2
            )
    if b is not None:
        out += b.data[None, :, None, None]

    def backward(g):
        dcols = np.empty_like(cols)
        for a in range(kh):
            for bb in range(kw):
                dcols[..., a, bb] = g[:, :, a : a + stride * h : stride, bb : bb + stride * wd : stride].transpose(
                    0, 2, 3, 1
                )
        if x.requires_grad:
            x.accumulate(np.tensordot(dcols, w.data, axes=([3, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2))
        if w.requires_grad:
            w.accumulate(np.tensordot(x.data, dcols, axes=([0, 2, 3], [0, 1, 2])))
        if b is not None and b.requires_grad:
            b.accumulate(g.sum(axis=(0, 2, 3)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pooling; ties route the gradient to the first maximum."""
    n, c, h, wd = x.shape
    if h % size or wd % size:
        raise ShapeMismatch(f"max_pool2d: {h}x{wd} not divisible by {size}")
    blocks = (
        x.data.reshape(n, c, h // size, size, wd // size, size)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // size, wd // size, size * size)
    )
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        d = np.zeros_like(blocks)
        np.put_along_axis(d, idx[..., None], g[..., None], axis=-1)
        d = d.reshape(n, c, h // size, wd // size, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd)
        x.accumulate(d)

    return Tensor.from_op(out, (x,), backward)


# --- masked per-sample reductions ---
def _flat(x: Tensor, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    n = x.shape[0]
    return x.data.reshape(n, -1), mask.reshape(n, -1)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Per-sample mean over positions where ``mask`` is true; 0 for an empty mask."""
    data, m = _flat(x, mask)
    count = m.sum(axis=1)
    denom = np.maximum(count, 1).astype(x.dtype)
    out = np.where(count > 0, np.where(m, data, 0.0).sum(axis=1) / denom, 0.0).astype(x.dtype)

    def backward(g):
        x.accumulate((m * (g / denom)[:, None]).reshape(x.shape))

    return Tensor.from_op(out, (x,), backward)


def masked_max(x: Tensor, mask: np.ndarray) -> Tensor:
    """Per-sample maximum over masked positions (first argmax gets the gradient); 0 for an empty mask."""
    data, m = _flat(x, mask)
    filled = np.where(m, data, -np.inf)
    idx = filled.argmax(axis=1)
    rows = np.arange(data.shape[0])
    has = m.any(axis=1)
    out = np.where(has, data[rows, idx], 0.0).astype(x.dtype)

    def backward(g):
        d = np.zeros_like(data)
        d[rows, idx] = np.where(has, g, 0.0)
        x.accumulate(d.reshape(x.shape))

    return Tensor.from_op(out, (x,), backward)
