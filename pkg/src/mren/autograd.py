"""NCHW tensors with a recording tape for reverse-mode differentiation.

Only the primitives the network needs are provided. Each primitive computes
its forward value with numpy and, when a :class:`Tape` is active and one of
its inputs requires a gradient, appends a node holding a closure that maps
the output gradient to input gradients.

Example::

    w = Tensor(np.ones((4, 4, 3, 3)), requires_grad=True)
    with Tape() as tape:
        loss = l1_loss(conv2d(x, w), target)
    tape.backward(loss)
    w.grad  # d loss / d w
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, UsageError
from .resample import upsample_matrix

_SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
_GELU_C = 0.044715


class Tensor:
    """A numpy array plus an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype)
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


@dataclass
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable


_active_tapes: list = []


class Tape:
    """Records primitive applications in execution order.

    Nodes are appended as operations run, so the list is already in
    topological order; :meth:`backward` walks it once in reverse. A tape is
    meant to be used from a single thread.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: dict[int, int] = {}

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def record(self, node):
        self._produced[id(node.output)] = len(self.nodes)
        self.nodes.append(node)

    def backward(self, loss):
        """Propagate d(loss) into the ``.grad`` of every leaf that requires it.

        Leaf gradients accumulate across calls; reset them first (see
        :meth:`ParamStore.zero_grad`) for a fresh gradient. The tape is
        cleared afterwards so intermediate values can be freed.
        """
        pos = self._produced.get(id(loss))
        if pos is None or self.nodes[pos].output is not loss:
            raise UsageError("backward called on a tensor not recorded on this tape")
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes[: pos + 1]):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for inp, gi in zip(node.inputs, node.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in self._produced:
                    if key in grads:
                        grads[key] = grads[key] + gi
                    else:
                        grads[key] = gi
                elif inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.dtype)
                else:
                    inp.grad += gi
        self.nodes.clear()
        self._produced.clear()


def current_tape():
    return _active_tapes[-1] if _active_tapes else None


def _emit(kind, inputs, data, backward):
    tape = current_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape.record(Node(kind, tuple(inputs), out, backward))
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(kind, x, y):
    if x.shape != y.shape:
        raise ShapeError(f"{kind}: shapes {x.shape} and {y.shape} differ")


def _rank4(kind, x, what="x"):
    if x.ndim != 4:
        raise ShapeError(f"{kind}: {what} must be rank 4 (n, c, h, w), got shape {x.shape}")


# ---------------------------------------------------------------- convolution


def conv2d(x, weight, bias=None, groups=1):
    """Stride-1 cross-correlation with "same" zero padding.

    ``weight`` has dims (out, in/groups, kh, kw) with odd kernel sides.
    ``groups`` is 1 (ordinary) or the input channel count (depthwise, one
    filter per channel).
    """
    x, weight = _as_tensor(x), _as_tensor(weight)
    bias = None if bias is None else _as_tensor(bias)
    _rank4("conv2d", x)
    _rank4("conv2d", weight, "weight")
    n, c, h, w = x.shape
    co, ci, kh, kw = weight.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel axes must be odd, got {kh}x{kw}")
    if groups < 1 or c % groups or co % groups:
        raise ShapeError(f"conv2d: groups={groups} must divide channel axes ({c} in, {co} out)")
    if ci * groups != c:
        raise ShapeError(f"conv2d: channel axis mismatch, input has {c}, weight expects {ci * groups}")
    if groups not in (1, c) or (groups == c and co != c):
        raise ShapeError("conv2d: only ordinary (groups=1) or depthwise (groups=in=out) supported")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias axis must have length {co}, got shape {bias.shape}")
    if weight.dtype != x.dtype or (bias is not None and bias.dtype != x.dtype):
        raise ShapeError("conv2d: dtype mismatch between input and parameters")

    ph, pw = kh // 2, kw // 2
    if groups == 1:
        out, backward = _conv_dense(x.data, weight.data, ph, pw)
    else:
        out, backward = _conv_depthwise(x.data, weight.data, ph, pw)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def _backward(g):
        gx, gw = backward(g)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit("conv2d", inputs, out, _backward)


def _im2col(x, kh, kw):
    """(n*h*w, kh*kw*c) patch matrix; columns ordered kernel row, kernel column, channel."""
    n, c, h, w = x.shape
    if kh == 1 and kw == 1:
        return x.transpose(0, 2, 3, 1).reshape(n * h * w, c)
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    xp[:, ph : ph + h, pw : pw + w, :] = x.transpose(0, 2, 3, 1)
    cols = np.empty((n, h, w, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + h, j : j + w, :]
    return cols.reshape(n * h * w, kh * kw * c)


def _kernel_matrix(weight):
    co = weight.shape[0]
    return weight.transpose(0, 2, 3, 1).reshape(co, -1)


def _conv_dense(x, weight, ph, pw):
    n, c, h, w = x.shape
    co, _, kh, kw = weight.shape
    wmat = _kernel_matrix(weight)
    cols = _im2col(x, kh, kw)
    out = (cols @ wmat.T).reshape(n, h, w, co).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * h * w, co)
        gw = (gm.T @ cols).reshape(co, kh, kw, c).transpose(0, 3, 1, 2)
        # input gradient: correlate g with the flipped, channel-transposed kernel
        flipped = _kernel_matrix(weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        gx = (_im2col(g, kh, kw) @ flipped.T).reshape(n, h, w, c).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(gx), np.ascontiguousarray(gw)

    return out, backward


def _conv_depthwise(x, weight, ph, pw):
    n, c, h, w = x.shape
    _, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    k = weight[:, 0]
    out = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i : i + h, j : j + w] * k[None, :, i, j, None, None]

    def backward(g):
        gk = np.empty_like(k)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gk[:, i, j] = np.einsum("nchw,nchw->c", g, xp[:, :, i : i + h, j : j + w])
                gxp[:, :, i : i + h, j : j + w] += g * k[None, :, i, j, None, None]
        return gxp[:, :, ph : ph + h, pw : pw + w].copy(), gk[:, None]

    return out, backward


# ---------------------------------------------------------------- elementwise


def gelu(x):
    """GELU, tanh approximation."""
    x = _as_tensor(x)
    a = x.data
    inner = _SQRT_2_OVER_PI * (a + _GELU_C * (a * a * a))
    t = np.tanh(inner)
    out = 0.5 * a * (1.0 + t)

    def backward(g):
        d_inner = _SQRT_2_OVER_PI * (1.0 + 3.0 * _GELU_C * a * a)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * d_inner),)

    return _emit("gelu", (x,), out.astype(a.dtype, copy=False), backward)


def _logistic(a):
    e = np.exp(-np.abs(a))
    return np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(a.dtype, copy=False)


def sigmoid(x):
    x = _as_tensor(x)
    s = _logistic(x.data)
    return _emit("sigmoid", (x,), s, lambda g: (g * s * (1.0 - s),))


def add(x, y):
    x, y = _as_tensor(x), _as_tensor(y)
    _same_shape("add", x, y)
    return _emit("add", (x, y), x.data + y.data, lambda g: (g, g))


def mul(x, y):
    """Hadamard product."""
    x, y = _as_tensor(x), _as_tensor(y)
    _same_shape("mul", x, y)
    a, b = x.data, y.data
    return _emit("mul", (x, y), a * b, lambda g: (g * b, g * a))


def axpy(alpha, x, y):
    """``alpha * x + y`` for a fixed real ``alpha``."""
    x, y = _as_tensor(x), _as_tensor(y)
    _same_shape("axpy", x, y)
    alpha = x.data.dtype.type(alpha)
    return _emit("axpy", (x, y), alpha * x.data + y.data, lambda g: (alpha * g, g))


def channel_scale(x, gate):
    """Multiply every channel plane of ``x`` by a per-(sample, channel) gate.

    ``gate`` has dims (n, c, 1, 1).
    """
    x, gate = _as_tensor(x), _as_tensor(gate)
    _rank4("channel_scale", x)
    if gate.shape != (*x.shape[:2], 1, 1):
        raise ShapeError(f"channel_scale: gate must have shape {(*x.shape[:2], 1, 1)}, got {gate.shape}")
    a, s = x.data, gate.data

    def backward(g):
        return g * s, (g * a).sum(axis=(2, 3), keepdims=True)

    return _emit("channel_scale", (x, gate), a * s, backward)


def global_avg_pool(x):
    """Spatial mean per channel, dims (n, c, 1, 1)."""
    x = _as_tensor(x)
    _rank4("global_avg_pool", x)
    h, w = x.shape[2:]
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def backward(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return _emit("global_avg_pool", (x,), out, backward)


# ---------------------------------------------------------------- data movement


def concat_channels(parts: Sequence[Tensor]):
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_channels: need at least one part")
    for p in parts:
        _rank4("concat_channels", p)
    n, _, h, w = parts[0].shape
    for p in parts[1:]:
        if p.shape[0] != n:
            raise ShapeError(f"concat_channels: batch axis mismatch {p.shape[0]} != {n}")
        if p.shape[2:] != (h, w):
            raise ShapeError(f"concat_channels: spatial axes mismatch {p.shape[2:]} != {(h, w)}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])
    out = np.concatenate([p.data for p in parts], axis=1)

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit("concat_channels", parts, out, backward)


def slice_channels(x, start, stop):
    x = _as_tensor(x)
    _rank4("slice_channels", x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: range [{start}, {stop}) outside channel axis of size {x.shape[1]}")

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[:, start:stop] = g
        return (gx,)

    return _emit("slice_channels", (x,), x.data[:, start:stop].copy(), backward)


def resize(kind, x, scale):
    """Upsample by an integer factor with bilinear or Keys bicubic weights."""
    x = _as_tensor(x)
    _rank4("resize", x)
    if kind not in ("bilinear", "bicubic"):
        raise ValueError(f"resize: unknown kind {kind!r}")
    if int(scale) != scale or scale < 1:
        raise ValueError(f"resize: scale must be a positive integer, got {scale}")
    scale = int(scale)
    if scale == 1:
        return _emit("resize", (x,), x.data.copy(), lambda g: (g,))
    h, w = x.shape[2:]
    mh = upsample_matrix(h, scale, kind, x.dtype)
    mw = upsample_matrix(w, scale, kind, x.dtype)
    out = mh @ (x.data @ mw.T)

    def backward(g):
        return (mh.T @ (g @ mw),)

    return _emit("resize", (x,), out, backward)


# ---------------------------------------------------------------- reductions


def l1_loss(pred, target):
    """Mean absolute error; subgradient 0 where the difference is 0."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    _same_shape("l1_loss", pred, target)
    diff = pred.data - target.data
    count = diff.size
    out = np.asarray(np.abs(diff).mean(), dtype=pred.dtype)

    def backward(g):
        gp = np.sign(diff) * (g / count)
        return gp, -gp

    return _emit("l1_loss", (pred, target), out, backward)


def sum_all(x):
    x = _as_tensor(x)
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _emit("sum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).astype(x.dtype),))


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Ordered name -> Tensor map; each tensor's ``.grad`` is its gradient slot."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def scope(self, prefix):
        return ParamScope(self, prefix)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = np.zeros_like(t.data)

    def num_elements(self):
        return sum(t.size for t in self._params.values())

    @property
    def dtype(self):
        return next(iter(self._params.values())).dtype

    def astype(self, dtype):
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def arrays(self):
        return {name: t.data for name, t in self._params.items()}


class ParamScope:
    """Prefix view onto a :class:`ParamStore`."""

    def __init__(self, store, prefix):
        self.store = store
        self.prefix = prefix

    def _full(self, name):
        return f"{self.prefix}.{name}" if self.prefix else name

    def __getitem__(self, name):
        return self.store[self._full(name)]

    def __contains__(self, name):
        return self._full(name) in self.store

    def scope(self, name):
        return ParamScope(self.store, self._full(name))

    def add(self, name, value):
        return self.store.add(self._full(name), value)


# ---------------------------------------------------------------- gradient check


def _rel_err(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def grad_check(fn, inputs, seed=0, *, eps=1e-5, max_points=None, directional=False):
    """Max relative error between tape gradients and central differences.

    ``fn`` maps the tensors in ``inputs`` to one output tensor; the checked
    objective is ``sum(fn(*inputs) * R)`` for a fixed random ``R``. With
    ``max_points`` only that many elements per input (chosen by ``seed``)
    are perturbed. With ``directional`` each input is instead perturbed once
    along a random direction ``d`` and ``<grad, d>`` is compared; this stays
    well conditioned in deep graphs where single elements have gradients
    near the rounding noise of the difference quotient.
    """
    rng = np.random.default_rng(seed)
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape).astype(out.dtype)
    with Tape() as tape:
        loss = sum_all(mul(fn(*inputs), Tensor(proj)))
    tape.backward(loss)

    def evaluate():
        return fn(*inputs).data.astype(np.float64)

    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        if directional:
            d = rng.standard_normal(t.shape).astype(t.dtype)
            orig = t.data.copy()
            t.data = orig + eps * d
            out_plus = evaluate()
            t.data = orig - eps * d
            out_minus = evaluate()
            t.data = orig
            numeric = float(np.sum((out_plus - out_minus) * proj)) / (2 * eps)
            worst = max(worst, float(_rel_err(float(np.sum(analytic * d)), numeric)))
            continue
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_points is not None and flat.size > max_points:
            idx = rng.choice(flat.size, size=max_points, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            out_plus = evaluate()
            flat[k] = orig - eps
            out_minus = evaluate()
            flat[k] = orig
            # difference before projecting: unaffected outputs cancel exactly
            numeric = float(np.sum((out_plus - out_minus) * proj)) / (2 * eps)
            worst = max(worst, float(_rel_err(analytic.reshape(-1)[k], numeric)))
    return worst


def _conv_case(k, depthwise=False, bias=True):
    def shapes(dims):
        n, c, h, w = dims
        ws = (c, 1, k, k) if depthwise else (c, c, k, k)
        return [dims, ws, (c,)] if bias else [dims, ws]

    def fn(x, wt, b=None):
        return conv2d(x, wt, b, groups=x.shape[1] if depthwise else 1)

    return fn, shapes


def _pair(dims):
    return [dims, dims]


PRIMITIVES = {
    "conv2d_1x1": _conv_case(1),
    "conv2d_3x3": _conv_case(3),
    "conv2d_5x5": _conv_case(5),
    "dwconv_1x1": _conv_case(1, depthwise=True),
    "dwconv_3x3": _conv_case(3, depthwise=True),
    "dwconv_5x5": _conv_case(5, depthwise=True),
    "gelu": (gelu, lambda d: [d]),
    "sigmoid": (sigmoid, lambda d: [d]),
    "add": (add, _pair),
    "mul": (mul, _pair),
    "axpy": (lambda x, y: axpy(0.2, x, y), _pair),
    "concat_channels": (lambda a, b: concat_channels([a, b]), _pair),
    "slice_channels": (lambda x: slice_channels(x, 0, max(1, x.shape[1] // 2)), lambda d: [d]),
    "channel_scale": (channel_scale, lambda d: [d, (d[0], d[1], 1, 1)]),
    "global_avg_pool": (global_avg_pool, lambda d: [d]),
    "bilinear_x2": (lambda x: resize("bilinear", x, 2), lambda d: [d]),
    "bilinear_x3": (lambda x: resize("bilinear", x, 3), lambda d: [d]),
    "bicubic_x2": (lambda x: resize("bicubic", x, 2), lambda d: [d]),
    "bicubic_x3": (lambda x: resize("bicubic", x, 3), lambda d: [d]),
    "l1_loss": (l1_loss, _pair),
    "sum": (sum_all, lambda d: [d]),
}


def check_primitive(name, dims, seed=0, **kwargs):
    """Run :func:`grad_check` on a registered primitive with random double inputs."""
    fn, shapes = PRIMITIVES[name]
    rng = np.random.default_rng(seed)
    inputs = [Tensor(rng.standard_normal(s)) for s in shapes(tuple(dims))]
    return grad_check(fn, inputs, seed, **kwargs)
