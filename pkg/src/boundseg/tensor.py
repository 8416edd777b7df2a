"""Dense float64 tensors with tape-free reverse-mode autodiff.

Every differentiable operation records a :class:`Node` holding an op tag,
its input tensors and whatever it saved for the backward pass.  Backward
rules live in ``BACKWARD_RULES`` keyed by tag, so a rule can be swapped out
(see :func:`inject_fault`) without touching the forward code.
"""

from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run forward passes without recording graph nodes."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple["Tensor", ...]
    saved: dict[str, Any] = field(default_factory=dict)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=DTYPE)  # always copies: tensors are value-semantic
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _scalar_error(self)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operators map onto the explicit op functions below
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        backward(self)


def _scalar_error(t: Tensor) -> float:
    raise ShapeError(f"expected a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def zeros_like(t: Tensor) -> Tensor:
    return Tensor(np.zeros_like(t.data))


def _make(op: str, inputs: tuple[Tensor, ...], out: np.ndarray, **saved) -> Tensor:
    res = Tensor.__new__(Tensor)
    res.data = out
    res.grad = None
    res.name = None
    res.node = None
    res.requires_grad = _grad_enabled and any(t.requires_grad for t in inputs)
    if res.requires_grad:
        res.node = Node(op, inputs, saved)
    return res


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


BACKWARD_RULES: dict[str, Callable[[Node, np.ndarray, np.ndarray], tuple]] = {}


def rule(op: str):
    def register(fn):
        BACKWARD_RULES[op] = fn
        return fn

    return register


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return _make("add", (a, b), a.data + b.data)


@rule("add")
def _add_back(node, out, g):
    return g, g


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return _make("sub", (a, b), a.data - b.data)


@rule("sub")
def _sub_back(node, out, g):
    return g, -g


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return _make("mul", (a, b), a.data * b.data)


@rule("mul")
def _mul_back(node, out, g):
    a, b = node.inputs
    return g * b.data, g * a.data


def div(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "div")
    return _make("div", (a, b), a.data / b.data)


@rule("div")
def _div_back(node, out, g):
    a, b = node.inputs
    return g / b.data, -g * out / b.data


def scale(a: Tensor, c: float) -> Tensor:
    return _make("scale", (a,), a.data * c, c=float(c))


@rule("scale")
def _scale_back(node, out, g):
    return (g * node.saved["c"],)


def add_const(a: Tensor, c: float) -> Tensor:
    return _make("add_const", (a,), a.data + c)


@rule("add_const")
def _add_const_back(node, out, g):
    return (g,)


def elementwise(op: str, a: Tensor, b) -> Tensor:
    """Dispatch ``add``/``sub``/``mul``/``scale`` by name."""
    if op == "scale":
        return scale(a, b)
    fns = {"add": add, "sub": sub, "mul": mul}
    if op not in fns:
        raise ValueError(f"unknown elementwise op {op!r}")
    return fns[op](a, as_tensor(b))


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every element of ``x`` by the single-element tensor ``s``."""
    if s.size != 1:
        raise ShapeError(f"scale_by: expected a single-element scale, got {s.shape}")
    return _make("scale_by", (x, s), x.data * s.data.reshape(()))


@rule("scale_by")
def _scale_by_back(node, out, g):
    x, s = node.inputs
    return g * s.data.reshape(()), np.full(s.shape, np.sum(g * x.data))


def add_bias(x: Tensor, b: Tensor, axis: int) -> Tensor:
    """Add a 1-D bias along ``axis`` of ``x`` (length must equal that dim)."""
    axis = axis % x.data.ndim
    if b.data.ndim != 1 or b.shape[0] != x.shape[axis]:
        raise ShapeError(f"add_bias: bias {b.shape} does not match axis {axis} of {x.shape}")
    view = [1] * x.data.ndim
    view[axis] = -1
    return _make("add_bias", (x, b), x.data + b.data.reshape(view), axis=axis)


@rule("add_bias")
def _add_bias_back(node, out, g):
    axis = node.saved["axis"]
    other = tuple(i for i in range(g.ndim) if i != axis)
    return g, g.sum(axis=other)


_OPEN_LO = np.nextafter(0.0, 1.0)
_OPEN_HI = np.nextafter(1.0, 0.0)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # clamped so saturated outputs stay strictly inside (0, 1)
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return np.clip(s, _OPEN_LO, _OPEN_HI)


def sigmoid(x: Tensor) -> Tensor:
    return _make("sigmoid", (x,), _stable_sigmoid(x.data))


@rule("sigmoid")
def _sigmoid_back(node, out, g):
    return (g * out * (1.0 - out),)


def log(x: Tensor) -> Tensor:
    return _make("log", (x,), np.log(x.data))


@rule("log")
def _log_back(node, out, g):
    return (g / node.inputs[0].data,)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    return _make("clip", (x,), np.clip(x.data, lo, hi), lo=lo, hi=hi)


@rule("clip")
def _clip_back(node, out, g):
    xd = node.inputs[0].data
    inside = (xd >= node.saved["lo"]) & (xd <= node.saved["hi"])
    return (g * inside,)


# ---------------------------------------------------------------- reductions


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _make("sum", (x,), np.array(x.data.sum()))


@rule("sum")
def _sum_back(node, out, g):
    return (np.full(node.inputs[0].shape, float(g)),)


def mean(x: Tensor) -> Tensor:
    return _make("mean", (x,), np.array(x.data.mean()))


@rule("mean")
def _mean_back(node, out, g):
    x = node.inputs[0]
    return (np.full(x.shape, float(g) / x.size),)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects [C,H,W], got {x.shape}")
    return _make("gap", (x,), x.data.mean(axis=(1, 2)))


@rule("gap")
def _gap_back(node, out, g):
    c, h, w = node.inputs[0].shape
    return (np.broadcast_to((g / (h * w))[:, None, None], (c, h, w)).copy(),)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return _make("softmax", (x,), e / e.sum(axis=-1, keepdims=True))


@rule("softmax")
def _softmax_back(node, out, g):
    return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Parameter-free normalization over the last axis."""
    mu = x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(x.data.var(axis=-1, keepdims=True) + eps)
    y = (x.data - mu) * inv
    return _make("layer_norm", (x,), y, inv=inv)


@rule("layer_norm")
def _layer_norm_back(node, out, g):
    inv = node.saved["inv"]
    gm = g.mean(axis=-1, keepdims=True)
    gy = (g * out).mean(axis=-1, keepdims=True)
    return (inv * (g - gm - out * gy),)


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return _make("reshape", (x,), x.data.reshape(tuple(shape)))


@rule("reshape")
def _reshape_back(node, out, g):
    return (g.reshape(node.inputs[0].shape),)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects rank 2, got {x.shape}")
    return _make("transpose", (x,), x.data.T.copy())


@rule("transpose")
def _transpose_back(node, out, g):
    return (g.T,)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make("matmul", (a, b), a.data @ b.data)


@rule("matmul")
def _matmul_back(node, out, g):
    a, b = node.inputs
    return g @ b.data.T, a.data.T @ g


# ---------------------------------------------------------------- spatial ops


def _pad_replicate(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode="edge")


def _unpad_replicate(gp: np.ndarray, ph: int, pw: int, h: int, w: int) -> np.ndarray:
    """Adjoint of replicate padding: fold border gradient back onto edge pixels."""
    if ph:
        rows = gp[:, ph : ph + h, :].copy()
        rows[:, 0, :] += gp[:, :ph, :].sum(axis=1)
        rows[:, -1, :] += gp[:, ph + h :, :].sum(axis=1)
    else:
        rows = gp
    if pw:
        out = rows[:, :, pw : pw + w].copy()
        out[:, :, 0] += rows[:, :, :pw].sum(axis=2)
        out[:, :, -1] += rows[:, :, pw + w :].sum(axis=2)
    else:
        out = rows
    return out


def conv2d(x: Tensor, k: Tensor, stride: int = 1) -> Tensor:
    """Cross-correlate ``x`` [C_in,H,W] with ``k`` [C_out,C_in,kh,kw].

    Borders are replicate-padded by kh//2, kw//2 so output pixel (i, j) is
    centred on input pixel (i*stride, j*stride).
    """
    if x.data.ndim != 3 or k.data.ndim != 4:
        raise ShapeError(f"conv2d expects [C,H,W] and [O,C,kh,kw], got {x.shape}, {k.shape}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    cout, cin, kh, kw = k.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if cin != x.shape[0]:
        raise ShapeError(f"conv2d: input channels {x.shape} do not match kernel {k.shape}")
    _, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = _pad_replicate(x.data, ph, pw)
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    out = np.tensordot(k.data, cols, axes=([1, 2, 3], [0, 3, 4]))
    return _make("conv2d", (x, k), np.ascontiguousarray(out), cols=cols, stride=stride)


@rule("conv2d")
def _conv2d_back(node, out, g):
    x, k = node.inputs
    cols, stride = node.saved["cols"], node.saved["stride"]
    _, _, kh, kw = k.shape
    c, h, w = x.shape
    ho, wo = g.shape[1:]
    dk = np.tensordot(g, cols, axes=([1, 2], [1, 2]))
    dcols = np.tensordot(k.data, g, axes=([0], [0]))  # [C, kh, kw, ho, wo]
    ph, pw = kh // 2, kw // 2
    gp = np.zeros((c, h + 2 * ph, w + 2 * pw))
    for i in range(kh):
        for j in range(kw):
            gp[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += dcols[:, i, j]
    return _unpad_replicate(gp, ph, pw, h, w), dk


RESAMPLE_MODES = ("upsample-nearest-2x", "maxpool-2x", "avgpool-2x")


def resample(x: Tensor, mode: str) -> Tensor:
    if x.data.ndim != 3:
        raise ShapeError(f"resample expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    if mode == "upsample-nearest-2x":
        out = np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2)
        return _make("upsample", (x,), out)
    if mode not in RESAMPLE_MODES:
        raise ValueError(f"unknown resample mode {mode!r}")
    if h % 2 or w % 2:
        raise ShapeError(f"{mode} needs even spatial dims, got {h}x{w}")
    blocks = x.data.reshape(c, h // 2, 2, w // 2, 2)
    if mode == "avgpool-2x":
        return _make("avgpool", (x,), blocks.mean(axis=(2, 4)))
    flat = blocks.transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)
    arg = flat.argmax(axis=-1)
    return _make("maxpool", (x,), np.take_along_axis(flat, arg[..., None], -1)[..., 0], arg=arg)


@rule("upsample")
def _upsample_back(node, out, g):
    c, h, w = node.inputs[0].shape
    return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)


@rule("avgpool")
def _avgpool_back(node, out, g):
    return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) / 4.0,)


@rule("maxpool")
def _maxpool_back(node, out, g):
    c, h, w = node.inputs[0].shape
    flat = np.zeros((c, h // 2, w // 2, 4))
    np.put_along_axis(flat, node.saved["arg"][..., None], g[..., None], -1)
    return (flat.reshape(c, h // 2, w // 2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h, w),)


# ---------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for inp in t.node.inputs:
                if inp.requires_grad and id(inp) not in seen:
                    stack.append((inp, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every requires_grad ancestor."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for t in reversed(_topo_order(loss)):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        in_grads = BACKWARD_RULES[t.node.op](t.node, t.data, g)
        for inp, ig in zip(t.node.inputs, in_grads):
            if ig is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + ig if key in grads else np.asarray(ig, dtype=DTYPE)


@contextlib.contextmanager
def inject_fault(op: str, factor: float = 1.5) -> Iterator[None]:
    """Temporarily scale every input gradient produced by ``op``'s rule."""
    original = BACKWARD_RULES[op]

    def faulty(node, out, g):
        return tuple(None if r is None else r * factor for r in original(node, out, g))

    BACKWARD_RULES[op] = faulty
    try:
        yield
    finally:
        BACKWARD_RULES[op] = original


def grad_check(f: Callable[..., Tensor], inputs: Tensor | Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backprop and central-difference gradients.

    ``f`` is called as ``f(*inputs)`` and must return a single-element tensor.
    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    xs = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    flags = [x.requires_grad for x in xs]
    for x in xs:
        x.requires_grad = True
        x.grad = None
    try:
        loss = f(*xs)
        if loss.size != 1:
            raise ShapeError(f"grad_check needs a scalar-valued f, got shape {loss.shape}")
        backward(loss)
        analytic = [np.zeros(x.shape) if x.grad is None else x.grad.copy() for x in xs]
        worst = 0.0
        with no_grad():
            for x, a in zip(xs, analytic):
                flat = x.data.reshape(-1)
                af = a.reshape(-1)
                for i in range(flat.size):
                    orig = flat[i]
                    flat[i] = orig + h
                    fp = f(*xs).item()
                    flat[i] = orig - h
                    fm = f(*xs).item()
                    flat[i] = orig
                    num = (fp - fm) / (2.0 * h)
                    err = abs(af[i] - num) / max(1.0, abs(af[i]), abs(num))
                    worst = max(worst, err)
        return worst
    finally:
        for x, flag in zip(xs, flags):
            x.requires_grad = flag
            x.grad = None


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))
