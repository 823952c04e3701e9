"""Tape-based reverse-mode automatic differentiation over 4-D numpy arrays.

Every primitive takes :class:`Node` inputs, computes its value eagerly and
appends one record to the shared :class:`Tape`.  ``Tape.backward`` walks the
records once in reverse order and accumulates gradients.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEBUG_NAN = os.environ.get("THERMOQ_DEBUG_NAN", "") not in ("", "0")


class TapeError(RuntimeError):
    pass


@dataclass
class _Record:
    op: str
    inputs: tuple[int, ...]
    backward: Callable[[np.ndarray], tuple] | None


@dataclass
class Tape:
    records: list[_Record] = field(default_factory=list)
    consumed: bool = False

    def _push(self, op, value, inputs=(), backward=None) -> "Node":
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        if DEBUG_NAN and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"non-finite value produced by {op}")
        self.records.append(_Record(op, tuple(n.index for n in inputs), backward))
        return Node(value, self, len(self.records) - 1)

    def leaf(self, value) -> "Node":
        return self._push("leaf", np.asarray(value))

    def constant(self, value) -> "Node":
        return self._push("const", np.asarray(value))

    def backward(self, output: "Node", grad=None, wrt: Sequence["Node"] = ()) -> list:
        """Propagate ``grad`` (default 1) from ``output``; return grads of ``wrt``.

        Nodes that do not influence ``output`` receive zero gradients.  A tape
        can be consumed once.
        """
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        if output.tape is not self:
            raise TapeError("output node belongs to another tape")
        self.consumed = True
        if grad is None:
            grad = np.ones_like(output.value)
        grads: dict[int, np.ndarray] = {output.index: np.asarray(grad, dtype=output.value.dtype)}
        keep = {n.index for n in wrt}
        for idx in range(output.index, -1, -1):
            g = grads.get(idx)
            rec = self.records[idx]
            if g is None or rec.backward is None:
                continue
            for src, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + gi
                else:
                    grads[src] = gi
            if idx not in keep:
                del grads[idx]
        return [grads.get(n.index, np.zeros_like(n.value)) for n in wrt]


class Node:
    __slots__ = ("value", "tape", "index")

    def __init__(self, value: np.ndarray, tape: Tape, index: int):
        self.value = value
        self.tape = tape
        self.index = index

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(self, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(self, other))

    def __rsub__(self, other):
        return sub(_lift(self, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, _lift(self, other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __getitem__(self, key):
        return crop(self, key)

    def __repr__(self):
        return f"Node(op={self.tape.records[self.index].op}, shape={self.value.shape})"


def _lift(ref: Node, x) -> Node:
    if isinstance(x, Node):
        return x
    return ref.tape.constant(np.asarray(x, dtype=ref.value.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return a.tape._push(
        "add", a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb))
    )


def sub(a: Node, b: Node) -> Node:
    sa, sb = a.shape, b.shape
    return a.tape._push(
        "sub", a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb))
    )


def mul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    return a.tape._push(
        "mul",
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
    )


def scale(a: Node, c: float) -> Node:
    return a.tape._push("scale", a.value * c, (a,), lambda g: (g * c,))


def abs_(a: Node) -> Node:
    s = np.sign(a.value)
    return a.tape._push("abs", np.abs(a.value), (a,), lambda g: (g * s,))


def square(a: Node) -> Node:
    av = a.value
    return a.tape._push("square", av * av, (a,), lambda g: (2.0 * g * av,))


def relu(a: Node) -> Node:
    pos = a.value > 0
    # NaN stays NaN so divergence is not masked
    return a.tape._push("relu", np.where(a.value <= 0, 0, a.value), (a,), lambda g: (g * pos,))


# ---------------------------------------------------------------- reductions


def total(a: Node) -> Node:
    shape = a.shape
    return a.tape._push(
        "sum", np.sum(a.value, keepdims=False), (a,), lambda g: (np.broadcast_to(g, shape).copy(),)
    )


def mean(a: Node) -> Node:
    n = a.value.size
    return scale(total(a), 1.0 / n)


def masked_mean(a: Node, mask: np.ndarray) -> Node:
    """Mean of ``a`` over the batch axis and over ``mask``-selected pixels.

    ``mask`` is an (H, W) boolean raster broadcast over batch and channel.
    """
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_mean over an empty mask")
    denom = a.shape[0] * a.shape[1] * count
    m = mask.astype(a.value.dtype)
    val = np.sum(a.value * m) / denom
    return a.tape._push(
        "masked_mean",
        np.asarray(val, dtype=a.value.dtype),
        (a,),
        lambda g: (np.broadcast_to(m * (g / denom), a.shape).astype(a.value.dtype),),
    )


# ---------------------------------------------------------------- structural


def crop(a: Node, key) -> Node:
    shape, dtype = a.shape, a.value.dtype

    def back(g):
        out = np.zeros(shape, dtype=dtype)
        out[key] = g
        return (out,)

    return a.tape._push("crop", a.value[key], (a,), back)


def concat(nodes: Sequence[Node], axis: int = 1) -> Node:
    sizes = [n.shape[axis] for n in nodes]
    splits = np.cumsum(sizes)[:-1]
    return nodes[0].tape._push(
        "concat",
        np.concatenate([n.value for n in nodes], axis=axis),
        tuple(nodes),
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def diagonal_flip(a: Node, mode: str = "transpose") -> Node:
    """Reflect every spatial map about its main (or anti-) diagonal."""
    if a.shape[-1] != a.shape[-2]:
        raise ValueError(f"diagonal flip needs square maps, got {a.shape[-2:]}")
    fn = _flip_fn(mode)
    return a.tape._push("diagonal_flip", fn(a.value), (a,), lambda g: (fn(g),))


def _flip_fn(mode):
    if mode == "transpose":
        return lambda x: np.ascontiguousarray(np.swapaxes(x, -1, -2))
    if mode == "anti-transpose":
        return lambda x: np.ascontiguousarray(np.swapaxes(x, -1, -2)[..., ::-1, ::-1])
    raise ValueError(f"unknown flip mode {mode!r}")


# ---------------------------------------------------------------- convolution


def _im2col(x: np.ndarray, kh: int, kw: int, pad: int) -> np.ndarray:
    # (B,C,H,W) -> (B, C*kh*kw, H'*W') for a stride-1 window
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    B, C, Hp, Wp = x.shape
    Ho, Wo = Hp - kh + 1, Wp - kw + 1
    cols = np.empty((B, C, kh, kw, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = x[:, :, i:i + Ho, j:j + Wo]
    return cols.reshape(B, C * kh * kw, Ho * Wo)


def _col2im(cols: np.ndarray, shape: tuple, kh: int, kw: int, pad: int) -> np.ndarray:
    B, C, H, W = shape
    Ho, Wo = H + 2 * pad - kh + 1, W + 2 * pad - kw + 1
    cols = cols.reshape(B, C, kh, kw, Ho, Wo)
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + Ho, j:j + Wo] += cols[:, :, i, j]
    return xp[:, :, pad:pad + H, pad:pad + W] if pad else xp


def conv2d(x: Node, k: Node, padding: int | None = None) -> Node:
    """Stride-1 2-D convolution (cross-correlation form); default 'same' padding."""
    kh, kw = k.shape[2:]
    if kh != kw or kh % 2 == 0:
        raise ValueError("conv2d supports odd square kernels")
    if x.shape[1] != k.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernel {k.shape[1]}")
    pad = kh // 2 if padding is None else padding
    xv, kv = x.value, k.value
    B, _, H, W = xv.shape
    O = kv.shape[0]
    Ho, Wo = H + 2 * pad - kh + 1, W + 2 * pad - kw + 1
    k2 = kv.reshape(O, -1)
    cols = _im2col(xv, kh, kw, pad)
    out = np.matmul(k2, cols).reshape(B, O, Ho, Wo)

    def back(g):
        g2 = g.reshape(B, O, Ho * Wo)
        dk = np.einsum("bop,bqp->oq", g2, cols, optimize=True).reshape(kv.shape)
        dx = _col2im(np.matmul(k2.T, g2), xv.shape, kh, kw, pad)
        return dx, dk.astype(kv.dtype, copy=False)

    return x.tape._push("conv2d", out, (x, k), back)


def bias_add(x: Node, b: Node) -> Node:
    """Add one scalar bias per channel."""
    bv = b.value.reshape(1, -1, 1, 1)
    return x.tape._push("bias_add", x.value + bv, (x, b), lambda g: (g, g.sum(axis=(0, 2, 3))))


def conv_transpose2x2(x: Node, k: Node) -> Node:
    """Transposed convolution, kernel 2x2 and stride 2; k has shape (C_in, C_out, 2, 2)."""
    if k.shape[2:] != (2, 2) or x.shape[1] != k.shape[0]:
        raise ValueError("conv_transpose2x2 expects k of shape (C_in, C_out, 2, 2)")
    xv, kv = x.value, k.value
    B, _, H, W = xv.shape
    co = kv.shape[1]
    out = np.einsum("bchw,coij->bohiwj", xv, kv, optimize=True).reshape(B, co, 2 * H, 2 * W)

    def back(g):
        g6 = g.reshape(B, co, H, 2, W, 2)
        dx = np.einsum("bohiwj,coij->bchw", g6, kv, optimize=True)
        dk = np.einsum("bchw,bohiwj->coij", xv, g6, optimize=True)
        return dx, dk

    return x.tape._push("conv_transpose2x2", out, (x, k), back)


def maxpool2x2(x: Node) -> Node:
    """2x2 max pooling; ties go to the first element in row-major order."""
    B, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ValueError("maxpool2x2 needs even spatial size")
    blocks = x.value.reshape(B, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(B, C, H // 2, W // 2, 4)
    arg = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        onehot = (np.arange(4) == arg[..., None]) * g[..., None]
        dx = onehot.reshape(B, C, H // 2, W // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(B, C, H, W).astype(g.dtype, copy=False),)

    return x.tape._push("maxpool2x2", out, (x,), back)


def upsample2x(x: Node) -> Node:
    """Nearest-neighbour 2x upsampling."""
    B, C, H, W = x.shape
    out = x.value.repeat(2, axis=2).repeat(2, axis=3)
    return x.tape._push(
        "upsample2x", out, (x,), lambda g: (g.reshape(B, C, H, 2, W, 2).sum(axis=(3, 5)),)
    )


def batch_norm(x: Node, gamma: Node, beta: Node, eps: float = 1e-5):
    """Training-mode batch normalization; returns (node, batch_mean, batch_var)."""
    xv = x.value
    mu = xv.mean(axis=(0, 2, 3), keepdims=True)
    var = xv.var(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xv - mu) * inv
    gv = gamma.value.reshape(1, -1, 1, 1)
    out = gv * xhat + beta.value.reshape(1, -1, 1, 1)
    m = xv.shape[0] * xv.shape[2] * xv.shape[3]

    def back(g):
        dxhat = g * gv
        dx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    node = x.tape._push("batch_norm", out, (x, gamma, beta), back)
    return node, mu.ravel(), var.ravel()


def affine_channels(x: Node, scale_: np.ndarray, shift: np.ndarray) -> Node:
    """Per-channel fixed affine map (used for batch norm in inference mode)."""
    s = scale_.reshape(1, -1, 1, 1).astype(x.value.dtype)
    t = shift.reshape(1, -1, 1, 1).astype(x.value.dtype)
    return x.tape._push("affine_channels", x.value * s + t, (x,), lambda g: (g * s,))
