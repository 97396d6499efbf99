"""Dense float32 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` that remembers its inputs and a
closure mapping the output gradient to input gradients.  Calling
:meth:`Tensor.backward` on a scalar walks that graph once in reverse
topological order and then releases it.
"""
from __future__ import annotations

import contextlib
import os
import threading
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float32

_DEBUG = os.environ.get("LATENT_EMOTION_DEBUG", "") not in ("", "0")


_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


@contextlib.contextmanager
def no_grad():
    """Run ops without recording the graph (inference, finite differences)."""
    prev = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = prev


@contextlib.contextmanager
def record_branches():
    """Collect the branch decisions of piecewise ops (ReLU masks, max-pool winners).

    Yields a list that receives one array per piecewise op evaluated
    inside the block, in evaluation order.  Two forward passes with equal
    lists ran through the same linear piece of the function.
    """
    prev = getattr(_state, "branches", None)
    log: list[np.ndarray] = []
    _state.branches = log
    try:
        yield log
    finally:
        _state.branches = prev


def _log_branch(decision: np.ndarray) -> None:
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(decision.copy())


def set_debug(flag: bool) -> None:
    """Enable the NaN/Inf guard after every op (off by default)."""
    global _DEBUG
    _DEBUG = bool(flag)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on an invalid backward call."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    """N-dimensional float32 array with an optional gradient.

    Parameters
    ----------
    data : array_like
        Values; copied and cast to float32.  Must be finite.
    requires_grad : bool
        Whether gradients should be accumulated into ``grad``.
    name : str, optional
        Label used in error messages and parameter stores.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite value in tensor{' ' + name if name else ''}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._consumed = False

    @classmethod
    def _from_op(cls, data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=DTYPE)
        if _DEBUG and not np.all(np.isfinite(out.data)):
            raise FloatingPointError(f"non-finite output from {backward.__qualname__}")
        out.grad = None
        out.name = None
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._consumed = False
        return out

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self.shape)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # --------------------------------------------------------------- autodiff
    def backward(self) -> None:
        """Populate ``grad`` on every ``requires_grad`` leaf reachable from this scalar."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("loss is detached: no input requires grad")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild it with a fresh forward pass")
        order = topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if g is not None:
                    node.grad = g.astype(DTYPE) if node.grad is None else node.grad + g
                continue
            if g is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg
        for node in order:
            if node._backward is not None:
                node._backward = None
                node._parents = ()
                node._consumed = True
        self._consumed = True

    # -------------------------------------------------------------- operators
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, Tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> Tensor:
        return transpose(self, axes if axes else None)

    def sum(self, axis=None) -> Tensor:
        return tsum(self, axis)

    def mean(self, axis=None) -> Tensor:
        return mean(self, axis)


def _raise_item(shape):
    raise ShapeError(f"item() needs a single-element tensor, got shape {shape}")


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    """Return ``x`` unchanged if it is a Tensor, else a constant Tensor."""
    return _wrap(x)


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root``, each after all of its inputs."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise
def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._from_op(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return Tensor._from_op(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._from_op(a.data * b.data, (a, b), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    _log_branch(mask)

    def backward(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, x.data, 0), (x,), backward)


# -------------------------------------------------------------------- shaping
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None

    def backward(g):
        return (g.reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (g.transpose(inverse),)

    return Tensor._from_op(x.data.transpose(axes), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate along ``axis`` (the channel axis for feature maps)."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: empty input")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def take(x: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Gather entries of ``x`` along ``axis`` by integer index."""
    index = np.asarray(index, dtype=np.intp)
    ax = axis % x.ndim

    def backward(g):
        out = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(out, (slice(None),) * ax + (index,), g)
        return (out,)

    return Tensor._from_op(np.take(x.data, index, axis=ax), (x,), backward)


# ----------------------------------------------------------------- reductions
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape).copy(),)

    return Tensor._from_op(x.data.sum(axis=axes), (x,), backward)


def mean(x: Tensor, axis=None) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axes), x.shape) / DTYPE(count),)

    return Tensor._from_op(x.data.mean(axis=axes), (x,), backward)


# -------------------------------------------------------------- linear algebra
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy batch semantics over leading axes.

    ``a`` is ``[..., m, k]`` and ``b`` is ``[..., k, n]``; leading axes
    broadcast.  Gradients are ``g @ b^T`` and ``a^T @ g``, summed over any
    broadcast batch axes.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if a.requires_grad else None
        gb = np.swapaxes(a.data, -1, -2) @ g if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return Tensor._from_op(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Fully-connected layer ``x @ weight + bias`` over the last axis.

    ``weight`` is ``[in, out]``; ``x`` may be ``[in]`` or ``[..., in]``.
    """
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, -1)), weight), (weight.shape[1],))
    else:
        out = matmul(x, weight)
    return out if bias is None else add(out, bias)


# ------------------------------------------------------------ softmax & losses
def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Row-normalised exponentials, computed after subtracting the row max."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(y, (x,), backward)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of ``targets`` under ``softmax(logits)``.

    ``logits`` is ``[B, C]`` (or ``[C]`` for a single sample) and
    ``targets`` holds class indices in ``[0, C)``.
    """
    if logits.ndim == 1:
        logits = reshape(logits, (1, -1))
    targets = np.atleast_1d(np.asarray(targets))
    if targets.dtype.kind not in "iu":
        raise ValueError(f"targets must be integer class indices, got dtype {targets.dtype}")
    batch, n_classes = logits.shape
    if targets.shape != (batch,):
        raise ShapeError(f"cross_entropy: {batch} logit rows but targets of shape {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= n_classes):
        raise ValueError(f"target index out of range [0, {n_classes}): {targets.tolist()}")
    logp = log_softmax(logits, axis=-1)
    picked = take(reshape(logp, (-1,)), np.arange(batch) * n_classes + targets)
    return mul(mean(picked), Tensor(-1.0))


# ---------------------------------------------------------------- convolution
def _pad_last(x: np.ndarray, pad: int, nd: int) -> np.ndarray:
    if pad == 0:
        return x
    widths = [(0, 0)] * (x.ndim - nd) + [(pad, pad)] * nd
    return np.pad(x, widths)


def _check_odd(k: int, op: str) -> None:
    if k % 2 == 0:
        raise ShapeError(f"{op}: kernel size must be odd for same padding, got {k}")


def _conv1d_raw(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # x [B, C, L], w [O, C, K] -> out [B, O, L], cols [B*L, C*K]
    b, c, length = x.shape
    o, _, k = w.shape
    xp = _pad_last(x, (k - 1) // 2, 1)
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # [B, C, L, K]
    cols = win.transpose(0, 2, 1, 3).reshape(b * length, c * k)
    out = cols @ w.reshape(o, c * k).T
    return out.reshape(b, length, o).transpose(0, 2, 1), cols


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Cross-correlation with zero "same" padding.

    ``x`` is ``[C_in, L]`` or ``[B, C_in, L]``; ``w`` is ``[C_out, C_in, K]``
    with odd ``K``; output length equals ``L``.
    """
    if w.ndim != 3:
        raise ShapeError(f"conv1d: weight must be [C_out, C_in, K], got {w.shape}")
    _check_odd(w.shape[2], "conv1d")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} does not match weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv1d: bias {bias.shape} does not match {w.shape[0]} output channels")
    out, cols = _conv1d_raw(xd, w.data)
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        g3 = g[None] if squeeze else g
        gx = gw = gb = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(w.data[:, :, ::-1].transpose(1, 0, 2))
            gx, _ = _conv1d_raw(g3, flipped)
            gx = gx[0] if squeeze else gx
        if w.requires_grad:
            g2 = g3.transpose(0, 2, 1).reshape(-1, w.shape[0])
            gw = (g2.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, backward)


def _depthwise_raw(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # shift-and-accumulate over taps, fixed tap order
    k = w.shape[1]
    length = x.shape[-1]
    xp = _pad_last(x, (k - 1) // 2, 1)
    out = w[:, 0, None] * xp[..., 0:length]
    for j in range(1, k):
        out += w[:, j, None] * xp[..., j : j + length]
    return out


def conv1d_depthwise(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """One odd-length filter per channel: ``x`` ``[C, L]``/``[B, C, L]``, ``w`` ``[C, K]``."""
    if w.ndim != 2:
        raise ShapeError(f"conv1d_depthwise: weight must be [C, K], got {w.shape}")
    _check_odd(w.shape[1], "conv1d_depthwise")
    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or xd.shape[1] != w.shape[0]:
        raise ShapeError(f"conv1d_depthwise: {x.shape} has a different channel count than weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv1d_depthwise: bias {bias.shape} does not match weight {w.shape}")
    out = _depthwise_raw(xd, w.data)
    if bias is not None:
        out = out + bias.data[:, None]

    def backward(g):
        g3 = g[None] if squeeze else g
        gx = gw = gb = None
        if x.requires_grad:
            gx = _depthwise_raw(g3, np.ascontiguousarray(w.data[:, ::-1]))
            gx = gx[0] if squeeze else gx
        if w.requires_grad:
            k, length = w.shape[1], xd.shape[-1]
            xp = _pad_last(xd, (k - 1) // 2, 1)
            gw = np.stack([(g3 * xp[..., j : j + length]).sum(axis=(0, 2)) for j in range(k)], axis=1)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, backward)


def _conv2d_raw(x: np.ndarray, w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = _pad_last(x, (k - 1) // 2, 2)
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))  # [N, C, H, W, k, k]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * k * k)
    out = cols @ w.reshape(o, -1).T
    return out.reshape(n, h, wd, o).transpose(0, 3, 1, 2), cols


def conv2d(x: Tensor, w: Tensor, bias: Tensor | None = None) -> Tensor:
    """Square-kernel 2D cross-correlation, stride 1, same padding.

    ``x`` is ``[N, C, H, W]`` (or ``[C, H, W]``), ``w`` is ``[O, C, k, k]``.
    """
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeError(f"conv2d: weight must be [O, C, k, k], got {w.shape}")
    _check_odd(w.shape[2], "conv2d")
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4 or xd.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} does not match weight {w.shape}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weight {w.shape}")
    out, cols = _conv2d_raw(xd, w.data)
    if bias is not None:
        out = out + bias.data[:, None, None]

    def backward(g):
        g4 = g[None] if squeeze else g
        gx = gw = gb = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
            gx, _ = _conv2d_raw(g4, flipped)
            gx = gx[0] if squeeze else gx
        if w.requires_grad:
            g2 = g4.transpose(0, 2, 3, 1).reshape(-1, w.shape[0])
            gw = (g2.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = g4.sum(axis=(0, 2, 3))
        return gx, gw, gb

    parents = (x, w) if bias is None else (x, w, bias)
    return Tensor._from_op(out[0] if squeeze else out, parents, backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping ``size``x``size`` max-pool; H and W must divide evenly.

    Ties route the gradient to the first maximal element in row-major order.
    """
    *lead, h, w = x.shape
    if h % size or w % size:
        raise ShapeError(f"max_pool2d: spatial shape {(h, w)} not divisible by {size}")
    blocks = x.data.reshape(*lead, h // size, size, w // size, size)
    blocks = np.moveaxis(blocks, -3, -2).reshape(*lead, h // size, w // size, size * size)
    arg = blocks.argmax(axis=-1)
    _log_branch(arg)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        flat = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(flat, arg[..., None], g[..., None], axis=-1)
        flat = flat.reshape(*lead, h // size, w // size, size, size)
        return (np.moveaxis(flat, -2, -3).reshape(x.shape),)

    return Tensor._from_op(out, (x,), backward)
