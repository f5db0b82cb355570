"""Minimal define-by-run reverse-mode autodiff over dense numpy arrays.

Image tensors are channel-last, ``(N, H, W, C)``. Every primitive records its
parents and a closure that maps the output gradient to parent gradients;
:func:`backward` walks the recorded graph in reverse topological order.

Dtype follows the inputs: tests run in float64, training in float32.
"""

from __future__ import annotations

import contextlib
import itertools
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .errors import NonScalarLoss, ShapeMismatch

_ids = itertools.count()
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "op", "id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        self.data = np.asarray(data, dtype=dtype) if dtype is not None else np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        label = self.name or f"{self.op}#{self.id}"
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other: float):
        return mul(self, 1.0 / other)


def _as_tensor(x, dtype=None) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _node(data: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _shape_error(op: str, msg: str) -> ShapeMismatch:
    return ShapeMismatch(f"{op}#{next(_ids)}: {msg}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise and reductions
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_error("add", f"{a.shape} + {b.shape}") from None
    out = _node(data, (a, b), "add")
    if out.requires_grad:
        def bw(g):
            _acc(a, _unbroadcast(g, a.shape))
            _acc(b, _unbroadcast(g, b.shape))
        out.backward_fn = bw
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar."""
    a = _as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        out = _node(a.data * np.asarray(c, a.dtype), (a,), "mul")
        if out.requires_grad:
            out.backward_fn = lambda g: _acc(a, g * np.asarray(c, g.dtype))
        return out
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_error("mul", f"{a.shape} * {b.shape}") from None
    out = _node(data, (a, b), "mul")
    if out.requires_grad:
        def bw(g):
            _acc(a, _unbroadcast(g * b.data, a.shape))
            _acc(b, _unbroadcast(g * a.data, b.shape))
        out.backward_fn = bw
    return out


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = _node(x.data * mask, (x,), "relu")
    if out.requires_grad:
        out.backward_fn = lambda g: _acc(x, g * mask)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    out = _node(s, (x,), "sigmoid")
    if out.requires_grad:
        out.backward_fn = lambda g: _acc(x, g * s * (1.0 - s))
    return out


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    data = np.asarray(x.data.sum(axis=axis))
    out = _node(data, (x,), "sum")
    if out.requires_grad:
        def bw(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(g, x.shape).astype(x.dtype))
        out.backward_fn = bw
    return out


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / float(n))


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise _shape_error("reshape", f"{x.shape} -> {shape}") from None
    out = _node(data, (x,), "reshape")
    if out.requires_grad:
        out.backward_fn = lambda g: _acc(x, g.reshape(x.shape))
    return out


def take(x: Tensor, index) -> Tensor:
    """Rows of ``x`` selected by an integer index array (repeats allowed)."""
    idx = np.asarray(index, dtype=np.int64)
    out = _node(x.data[idx], (x,), "take")
    if out.requires_grad:
        def bw(g):
            gx = np.zeros_like(x.data)
            np.add.at(gx, idx, g)
            _acc(x, gx)
        out.backward_fn = bw
    return out


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (channel axis by default)."""
    xs = [_as_tensor(x) for x in xs]
    try:
        data = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise _shape_error("concat", " ,".join(str(x.shape) for x in xs)) from None
    out = _node(data, xs, "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [x.shape[axis] for x in xs])

        def bw(g):
            for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                _acc(x, g[tuple(sl)])
        out.backward_fn = bw
    return out


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape (N, I) and ``w`` of shape (I, O)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise _shape_error("linear", f"x {x.shape} @ w {w.shape}")
    data = x.data @ w.data
    if b is not None:
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)
    out = _node(data, parents, "linear")
    if out.requires_grad:
        def bw(g):
            _acc(x, g @ w.data.T)
            _acc(w, x.data.T @ g)
            if b is not None:
                _acc(b, g.sum(axis=0))
        out.backward_fn = bw
    return out


def _im2col(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, int, int]:
    """Patch matrix of shape (N*Ho*Wo, k*k*C) for zero-padded 'same' convolution."""
    n, h, w, c = x.shape
    p = k // 2
    ho, wo = -(-h // stride), -(-w // stride)
    xp = np.zeros((n, h + 2 * p, w + 2 * p, c), dtype=x.dtype)
    xp[:, p:p + h, p:p + w] = x
    s0, s1, s2, s3 = xp.strides
    view = as_strided(xp, (n, ho, wo, k, k, c), (s0, stride * s1, stride * s2, s1, s2, s3), writeable=False)
    return view.reshape(n * ho * wo, k * k * c), ho, wo


def _conv_input_grad(g: np.ndarray, w: np.ndarray, in_shape, stride: int) -> np.ndarray:
    """Gradient w.r.t. the conv input: stride-1 correlation of the (dilated) output gradient with the flipped kernel."""
    n, h, wd, c = in_shape
    k = w.shape[0]
    if stride > 1:
        gd = np.zeros((n, stride * g.shape[1], stride * g.shape[2], g.shape[3]), dtype=g.dtype)
        gd[:, ::stride, ::stride] = g
        g = gd
    wf = np.ascontiguousarray(w[::-1, ::-1].transpose(0, 1, 3, 2)).reshape(-1, c)
    cols, ho, wo = _im2col(g, k, 1)
    return (cols @ wf).reshape(n, ho, wo, c)[:, :h, :wd]


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1) -> Tensor:
    """Zero-padded 'same' convolution, channel-last.

    ``x``: (N, H, W, C); ``w``: (k, k, C, O) with odd k; stride 1 or 2.
    Output spatial size is ``ceil(H / stride)``.
    """
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[2] != x.shape[3] or w.shape[0] != w.shape[1]:
        raise _shape_error("conv2d", f"x {x.shape} with kernel {w.shape}")
    k = w.shape[0]
    if k % 2 != 1 or stride not in (1, 2):
        raise _shape_error("conv2d", f"kernel {k} / stride {stride} unsupported")
    n = x.shape[0]
    cols, ho, wo = _im2col(x.data, k, stride)
    wm = w.data.reshape(cols.shape[1], -1)
    data = cols @ wm
    if b is not None:
        data += b.data
    data = data.reshape(n, ho, wo, -1)
    parents = (x, w) if b is None else (x, w, b)
    out = _node(data, parents, "conv2d")
    if out.requires_grad:
        def bw(g):
            g2 = g.reshape(n * ho * wo, -1)
            if w.requires_grad:
                _acc(w, (cols.T @ g2).reshape(w.shape))
            if b is not None and b.requires_grad:
                _acc(b, g2.sum(axis=0))
            if x.requires_grad:
                _acc(x, _conv_input_grad(g, w.data, x.shape, stride))
        out.backward_fn = bw
    return out


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour x2 spatial upsampling."""
    if x.data.ndim != 4:
        raise _shape_error("upsample2x", f"expected NHWC, got {x.shape}")
    n, h, w, c = x.shape
    data = np.broadcast_to(x.data[:, :, None, :, None, :], (n, h, 2, w, 2, c)).reshape(n, 2 * h, 2 * w, c)
    out = _node(data, (x,), "upsample2x")
    if out.requires_grad:
        out.backward_fn = lambda g: _acc(x, g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))
    return out


def spatial_max(x: Tensor) -> Tensor:
    """Global max over H and W: (N, H, W, C) -> (N, C)."""
    if x.data.ndim != 4:
        raise _shape_error("spatial_max", f"expected NHWC, got {x.shape}")
    n, h, w, c = x.shape
    flat = x.data.reshape(n, h * w, c)
    arg = flat.argmax(axis=1)
    data = np.take_along_axis(flat, arg[:, None, :], axis=1)[:, 0, :]
    out = _node(data, (x,), "spatial_max")
    if out.requires_grad:
        def bw(g):
            gx = np.zeros_like(flat)
            np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
            _acc(x, gx.reshape(x.shape))
        out.backward_fn = bw
    return out


def scale_shift(x: Tensor, scale: Tensor, shift: Tensor | None = None) -> Tensor:
    """Per-sample, per-channel affine modulation: ``x * scale + shift``.

    ``x``: (N, H, W, C); ``scale`` and ``shift``: (N, C), broadcast over H, W.
    """
    if x.data.ndim != 4 or scale.shape != (x.shape[0], x.shape[3]) or (
        shift is not None and shift.shape != scale.shape
    ):
        raise _shape_error("scale_shift", f"x {x.shape}, scale {scale.shape}")
    s = scale.data[:, None, None, :]
    data = x.data * s
    if shift is not None:
        data = data + shift.data[:, None, None, :]
    parents = (x, scale) if shift is None else (x, scale, shift)
    out = _node(data, parents, "scale_shift")
    if out.requires_grad:
        def bw(g):
            _acc(x, g * s)
            if scale.requires_grad:
                _acc(scale, (g * x.data).sum(axis=(1, 2)))
            if shift is not None:
                _acc(shift, g.sum(axis=(1, 2)))
        out.backward_fn = bw
    return out


def tile_spatial(c: Tensor, h: int, w: int) -> Tensor:
    """Broadcast (N, K) vectors to (N, h, w, K) feature maps."""
    if c.data.ndim != 2:
        raise _shape_error("tile_spatial", f"expected (N, K), got {c.shape}")
    data = np.broadcast_to(c.data[:, None, None, :], (c.shape[0], h, w, c.shape[1])).copy()
    out = _node(data, (c,), "tile_spatial")
    if out.requires_grad:
        out.backward_fn = lambda g: _acc(c, g.sum(axis=(1, 2)))
    return out


# ---------------------------------------------------------------------------
# heatmap heads and losses
# ---------------------------------------------------------------------------


def _flat_pixels(x: Tensor, op: str) -> np.ndarray:
    if x.data.ndim != 4:
        raise _shape_error(op, f"expected NHWC, got {x.shape}")
    n, h, w, c = x.shape
    return x.data.reshape(n, h * w, c)


def pixel_softmax(x: Tensor) -> Tensor:
    """Softmax over all pixels, independently per image and channel."""
    flat = _flat_pixels(x, "pixel_softmax")
    e = np.exp(flat - flat.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    out = _node(p.reshape(x.shape), (x,), "pixel_softmax")
    if out.requires_grad:
        def bw(g):
            gf = g.reshape(p.shape)
            _acc(x, (p * (gf - (gf * p).sum(axis=1, keepdims=True))).reshape(x.shape))
        out.backward_fn = bw
    return out


def log_softmax_pixels(x: Tensor) -> Tensor:
    """Log of :func:`pixel_softmax`, computed stably."""
    flat = _flat_pixels(x, "log_softmax_pixels")
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = _node(logp.reshape(x.shape), (x,), "log_softmax_pixels")
    if out.requires_grad:
        def bw(g):
            gf = g.reshape(logp.shape)
            _acc(x, (gf - np.exp(logp) * gf.sum(axis=1, keepdims=True)).reshape(x.shape))
        out.backward_fn = bw
    return out


def kl_pixels(target: np.ndarray, logits: Tensor) -> Tensor:
    """Per-image KL(q || softmax(logits)) summed over channels; shape (N,).

    ``q`` is the target normalised to unit mass per image and channel.
    """
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise _shape_error("kl_pixels", f"target {t.shape} vs logits {logits.shape}")
    n = t.shape[0]
    q = t / t.sum(axis=(1, 2), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        neg_entropy = np.where(q > 0, q * np.log(q), 0.0).reshape(n, -1).sum(axis=1)
    cross = sum(reshape(mul(log_softmax_pixels(logits), Tensor(q)), (n, -1)), axis=1)
    return add(Tensor(neg_entropy.astype(logits.dtype)), mul(cross, -1.0))


def bce_with_logits(logits: Tensor, target: np.ndarray) -> Tensor:
    """Mean binary cross-entropy between sigmoid(logits) and a {0,1} target."""
    y = np.asarray(target, dtype=logits.dtype)
    if y.shape != logits.shape:
        raise _shape_error("bce_with_logits", f"target {y.shape} vs logits {logits.shape}")
    x = logits.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = _node(np.asarray(loss.mean()), (logits,), "bce_with_logits")
    if out.requires_grad:
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        out.backward_fn = lambda g: _acc(logits, g * (s - y) / x.size)
    return out


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that require grad, parents before children."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires grad.

    Intermediate gradients and closures are released as the pass proceeds,
    so a graph can be differentiated once.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        node.backward_fn(node.grad)
        node.backward_fn = None
        node.parents = ()
        node.grad = None


def zero_grad(tensors) -> None:
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# finite-difference checking
# ---------------------------------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference scaled by the largest gradient magnitude."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_gradients(
    fn: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = 48,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward() against central differences for a scalar-valued ``fn``.

    Checks up to ``max_entries`` randomly chosen coordinates per tensor and
    returns the worst relative error. Tensors must be float64.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    backward(fn())
    worst = 0.0
    for t in tensors:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad.copy()
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        numeric = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = fn().item()
                flat[i] = orig - h
                fm = fn().item()
                flat[i] = orig
                numeric[k] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic.reshape(-1)[idx], numeric))
    for t in tensors:
        t.grad = None
    return worst


@dataclass
class GradReport:
    tolerance: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def failures(self) -> dict[str, float]:
        return {k: v for k, v in self.errors.items() if not v < self.tolerance}

    @property
    def passed(self) -> bool:
        return not self.failures

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if v < self.tolerance else 'FAIL'} {k:<20s} max_rel_err={v:.2e}"
            for k, v in self.errors.items()
        ]


def _away_from_zero(a: np.ndarray, margin: float = 1e-2) -> np.ndarray:
    return np.where(np.abs(a) < margin, np.sign(a + 1e-300) * margin + a, a)


def grad_check(tolerance: float = 1e-4, seed: int = 0) -> GradReport:
    """Finite-difference check of every primitive on small random float64 shapes."""
    rng = np.random.default_rng(seed)

    def T(*shape, nonzero=False):
        a = rng.standard_normal(shape)
        return Tensor(_away_from_zero(a) if nonzero else a)

    def proj(out: Tensor) -> Tensor:
        r = Tensor(rng.standard_normal(out.shape))
        return sum(mul(out, r))

    report = GradReport(tolerance)
    cases: dict[str, Callable[[], tuple[Callable[[], Tensor], list[Tensor]]]] = {}

    def case(name):
        def deco(f):
            cases[name] = f
            return f
        return deco

    @case("conv2d_stride1")
    def _():
        x, w, b = T(2, 6, 5, 3), T(3, 3, 3, 4), T(4)
        r = Tensor(rng.standard_normal((2, 6, 5, 4)))
        return (lambda: sum(mul(conv2d(x, w, b, 1), r))), [x, w, b]

    @case("conv2d_stride2")
    def _():
        x, w, b = T(1, 8, 8, 2), T(3, 3, 2, 3), T(3)
        r = Tensor(rng.standard_normal((1, 4, 4, 3)))
        return (lambda: sum(mul(conv2d(x, w, b, 2), r))), [x, w, b]

    @case("upsample2x")
    def _():
        x = T(2, 3, 4, 2)
        r = Tensor(rng.standard_normal((2, 6, 8, 2)))
        return (lambda: sum(mul(upsample2x(x), r))), [x]

    @case("relu")
    def _():
        x = T(3, 7, nonzero=True)
        r = Tensor(rng.standard_normal((3, 7)))
        return (lambda: sum(mul(relu(x), r))), [x]

    @case("sigmoid")
    def _():
        x = T(3, 7)
        r = Tensor(rng.standard_normal((3, 7)))
        return (lambda: sum(mul(sigmoid(x), r))), [x]

    @case("linear")
    def _():
        x, w, b = T(4, 5), T(5, 3), T(3)
        r = Tensor(rng.standard_normal((4, 3)))
        return (lambda: sum(mul(linear(x, w, b), r))), [x, w, b]

    @case("add")
    def _():
        a, b = T(2, 3, 4), T(3, 4)
        r = Tensor(rng.standard_normal((2, 3, 4)))
        return (lambda: sum(mul(add(a, b), r))), [a, b]

    @case("mul")
    def _():
        a, b = T(2, 3), T(2, 3)
        r = Tensor(rng.standard_normal((2, 3)))
        return (lambda: sum(mul(mul(a, b), r))), [a, b]

    @case("channel_concat")
    def _():
        a, b = T(2, 3, 3, 2), T(2, 3, 3, 3)
        r = Tensor(rng.standard_normal((2, 3, 3, 5)))
        return (lambda: sum(mul(concat([a, b]), r))), [a, b]

    @case("spatial_max")
    def _():
        x = T(2, 4, 5, 3)
        r = Tensor(rng.standard_normal((2, 3)))
        return (lambda: sum(mul(spatial_max(x), r))), [x]

    @case("pixel_softmax")
    def _():
        x = T(2, 4, 5, 1)
        r = Tensor(rng.standard_normal((2, 4, 5, 1)))
        return (lambda: sum(mul(pixel_softmax(x), r))), [x]

    @case("log_softmax_pixels")
    def _():
        x = T(2, 4, 5, 1)
        r = Tensor(rng.standard_normal((2, 4, 5, 1)))
        return (lambda: sum(mul(log_softmax_pixels(x), r))), [x]

    @case("scale_shift")
    def _():
        x, s, t = T(2, 3, 4, 3), T(2, 3), T(2, 3)
        r = Tensor(rng.standard_normal((2, 3, 4, 3)))
        return (lambda: sum(mul(scale_shift(x, s, t), r))), [x, s, t]

    @case("tile_spatial")
    def _():
        c = T(2, 4)
        r = Tensor(rng.standard_normal((2, 3, 5, 4)))
        return (lambda: sum(mul(tile_spatial(c, 3, 5), r))), [c]

    @case("mean")
    def _():
        x = T(3, 4)
        return (lambda: mean(mul(x, x))), [x]

    @case("sum_axis")
    def _():
        x = T(3, 4)
        r = Tensor(rng.standard_normal(4))
        return (lambda: sum(mul(sum(x, axis=0), r))), [x]

    @case("reshape_take")
    def _():
        x = T(3, 4)
        r = Tensor(rng.standard_normal((5, 2, 2)))
        return (lambda: sum(mul(reshape(take(x, [0, 2, 2, 1, 0]), (5, 2, 2)), r))), [x]

    @case("kl_pixels")
    def _():
        x = T(2, 5, 4, 1)
        t = np.exp(rng.standard_normal((2, 5, 4, 1)))
        return (lambda: sum(kl_pixels(t, x))), [x]

    @case("bce_with_logits")
    def _():
        x = T(2, 4, 3, 1)
        y = (rng.random((2, 4, 3, 1)) > 0.5).astype(np.float64)
        return (lambda: bce_with_logits(x, y)), [x]

    for name, make in cases.items():
        fn, tensors = make()
        report.errors[name] = check_gradients(fn, tensors, max_entries=None)
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"TACKCKPT"
CKPT_VERSION = 1


def write_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Serialise named arrays: magic, u32 version, then (name, rank, dims, f32 payload) records."""
    parts = [CKPT_MAGIC, struct.pack("<I", CKPT_VERSION)]
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(np.ascontiguousarray(a).tobytes())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos, out = 12, {}
    while pos < len(buf):
        try:
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
        except struct.error:
            raise ShapeMismatch(f"{path}: truncated record header") from None
        count = int(np.prod(dims)) if rank else 1
        if pos + 4 * count > len(buf):
            raise ShapeMismatch(f"{path}: truncated payload for {name!r}")
        out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
        pos += 4 * count
    return out
