"""Minimal reverse-mode autodiff over numpy arrays.

Only the operations needed by the generators, discriminators and losses are
provided. Every op records a closure that maps the output gradient to the
input gradients; :func:`backward` replays those closures in reverse
topological order.

Precision follows the data: parameters are float32 for training and float64
for gradient checking.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from . import kernels
from .errors import DimensionError, NumericError, UsageError

__all__ = [
    "Tensor",
    "Tape",
    "tensor",
    "no_grad",
    "conv2d",
    "conv_transpose2d",
    "instance_norm",
    "activation",
    "relu",
    "leaky_relu",
    "tanh",
    "softplus",
    "absolute",
    "add",
    "sub",
    "mul",
    "scale",
    "mean",
    "sum",
    "backward",
    "finite_diff_grad",
    "finite_diff_entries",
    "AdamState",
    "adam_step",
    "Adam",
]

LEAKY_SLOPE = 0.2

_state = threading.local()


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """An array node in the differentiation graph.

    Leaf tensors created with ``requires_grad=True`` own a ``grad`` buffer of
    the same shape that :func:`backward` accumulates into.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, *, _parents=(), _backward=None, op="leaf"):
        data = np.asarray(data)
        if data.dtype not in (np.float32, np.float64):
            data = data.astype(np.float32)
        self.data = data
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.grad = np.zeros_like(data) if (self.requires_grad and not _parents) else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return not self._parents

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)


def tensor(data, requires_grad=False, dtype=None):
    arr = np.array(data, dtype=dtype if dtype is not None else np.float32)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(value, like):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full(like.shape, value, dtype=like.dtype))


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite value produced by {op}")


def _make(data, parents, backward_fn, op):
    _check_finite(data, op)
    track = _grad_enabled() and any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn, op=op)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# convolution


def _pad4(padding):
    if isinstance(padding, (int, np.integer)):
        if padding < 0:
            raise DimensionError("padding must be non-negative")
        return (int(padding),) * 4
    top, bottom, left, right = (int(p) for p in padding)
    if min(top, bottom, left, right) < 0:
        raise DimensionError("padding must be non-negative")
    return top, bottom, left, right


def conv_output_size(size, k, stride, pad_lo, pad_hi):
    return (size + pad_lo + pad_hi - k) // stride + 1


def conv2d(x, weight, bias, stride=1, padding=0):
    """2-D cross-correlation with zero padding.

    ``padding`` is an int or a (top, bottom, left, right) tuple.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv2d expects 4-D input and weight")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {wcin}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1:
        raise DimensionError("stride must be positive")
    pt, pb, pl, pr = _pad4(padding)
    hp, wp = h + pt + pb, w + pl + pr
    if kh > hp or kw > wp:
        raise DimensionError("conv2d: kernel larger than padded input")
    ho = conv_output_size(h, kh, stride, pt, pb)
    wo = conv_output_size(w, kw, stride, pl, pr)

    xp = x.data
    if pt or pb or pl or pr:
        xp = np.pad(xp, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    xp = np.ascontiguousarray(xp)
    cols = kernels.im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    out += bias.data[None, :, None]
    out = out.reshape(n, cout, ho, wo)

    def _backward(g):
        g2 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            dcols = np.matmul(wmat.T, g2)
            dxp = kernels.col2im(dcols, cin, hp, wp, kh, kw, stride, ho, wo)
            gx = dxp[:, :, pt : pt + h, pl : pl + w]
        if weight.requires_grad:
            gw = np.zeros_like(wmat)
            for b in range(n):
                gw += g2[b] @ cols[b].T
            gw = gw.reshape(weight.shape)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, weight, bias), _backward, "conv2d")


def conv_transpose2d(x, weight, bias, stride=1, padding=0, output_padding=0):
    """Transposed convolution; ``weight`` has shape (Cin, Cout, kh, kw).

    The forward pass is exactly the data gradient of :func:`conv2d` with the
    same weight, stride and padding.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("conv_transpose2d expects 4-D input and weight")
    n, cin, h, w = x.shape
    wcin, cout, kh, kw = weight.shape
    if wcin != cin:
        raise DimensionError(f"conv_transpose2d: input has {cin} channels, weight expects {wcin}")
    if bias.shape != (cout,):
        raise DimensionError(f"conv_transpose2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0 or output_padding < 0:
        raise DimensionError("invalid stride/padding")
    if output_padding >= max(stride, 1) and output_padding > padding:
        raise DimensionError("output_padding must be smaller than stride")
    ho = (h - 1) * stride - 2 * padding + kh + output_padding
    wo = (w - 1) * stride - 2 * padding + kw + output_padding
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d: empty output")
    # full scatter extent plus trailing output padding
    hp = (h - 1) * stride + kh + output_padding
    wp = (w - 1) * stride + kw + output_padding

    wmat = weight.data.reshape(cin, cout * kh * kw)
    xs = x.data.reshape(n, cin, h * w)
    cols = np.ascontiguousarray(np.matmul(wmat.T, xs))
    full = kernels.col2im(cols, cout, hp, wp, kh, kw, stride, h, w)
    out = np.ascontiguousarray(full[:, :, padding : padding + ho, padding : padding + wo])
    out += bias.data[None, :, None, None]

    def _backward(g):
        gx = gw = gb = None
        gp = np.zeros((n, cout, hp, wp), dtype=g.dtype)
        gp[:, :, padding : padding + ho, padding : padding + wo] = g
        gcols = kernels.im2col(gp, kh, kw, stride, h, w)
        if x.requires_grad:
            gx = np.matmul(wmat, gcols).reshape(x.shape)
        if weight.requires_grad:
            gw = np.zeros_like(wmat)
            for b in range(n):
                gw += xs[b] @ gcols[b].T
            gw = gw.reshape(weight.shape)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gw, gb

    return _make(out, (x, weight, bias), _backward, "conv_transpose2d")


# ---------------------------------------------------------------------------
# normalization and activations


def instance_norm(x, scale_, shift, epsilon=1e-5):
    """Per-sample, per-channel normalization over H*W (population variance)."""
    if x.data.ndim != 4:
        raise DimensionError("instance_norm expects N,C,H,W input")
    n, c, h, w = x.shape
    if h * w < 2:
        raise DimensionError("instance_norm needs at least two pixels per plane")
    if scale_.shape != (c,) or shift.shape != (c,):
        raise DimensionError("instance_norm: scale/shift must have one entry per channel")
    xd = x.data
    mu = xd.mean(axis=(2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + epsilon)
    xhat = xc * inv
    gamma = scale_.data[None, :, None, None]
    out = xhat * gamma + shift.data[None, :, None, None]

    def _backward(g):
        gx = gs = gb = None
        if x.requires_grad:
            gh = g * gamma
            m1 = gh.mean(axis=(2, 3), keepdims=True)
            m2 = (gh * xhat).mean(axis=(2, 3), keepdims=True)
            gx = inv * (gh - m1 - xhat * m2)
        if scale_.requires_grad:
            gs = (g * xhat).sum(axis=(0, 2, 3))
        if shift.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gs, gb

    return _make(out, (x, scale_, shift), _backward, "instance_norm")


def relu(x):
    pos = x.data > 0
    out = np.where(pos, x.data, 0).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * pos,), "relu")


def leaky_relu(x, slope=LEAKY_SLOPE):
    factor = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return _make(x.data * factor, (x,), lambda g: (g * factor,), "leaky_relu")


def tanh(x):
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def softplus(x):
    """log(1 + exp(x)), computed stably."""
    xd = x.data
    out = np.maximum(xd, 0) + np.log1p(np.exp(-np.abs(xd)))
    sig = 0.5 * (1 + np.tanh(0.5 * xd))
    return _make(out.astype(x.dtype), (x,), lambda g: (g * sig,), "softplus")


def absolute(x):
    sgn = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sgn,), "abs")


_ACTIVATIONS = {"relu": relu, "leaky_relu": leaky_relu, "tanh": tanh}


def activation(x, kind):
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise UsageError(f"unknown activation {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b):
    _same_shape(a, b, "add")
    return _make(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    _same_shape(a, b, "sub")
    return _make(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def scale(a, factor):
    f = a.dtype.type(factor)
    return _make(a.data * f, (a,), lambda g: (g * f,), "scale")


def sum(a):  # noqa: A001 - mirrors the reduction name
    shape, dtype = a.shape, a.dtype
    # ravel + np.sum uses a fixed pairwise order for a given length
    out = np.asarray(np.sum(a.data.ravel()), dtype=dtype)
    return _make(out, (a,), lambda g: (np.full(shape, g, dtype=dtype),), "sum")


def mean(a):
    shape, dtype, count = a.shape, a.dtype, a.size
    out = np.asarray(np.sum(a.data.ravel()) / count, dtype=dtype)
    return _make(out, (a,), lambda g: (np.full(shape, g / count, dtype=dtype),), "mean")


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Differentiable records reachable from a root, in topological order."""

    def __init__(self, records):
        self.records = records

    @classmethod
    def from_root(cls, root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor that requires grad")
    _check_finite(loss.data, "loss")
    tape = Tape.from_root(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.records):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.is_leaf:
            node.grad += g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return tape


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_entries(f, x, indices, h=1e-4):
    """Central differences of scalar ``f(x)`` at the flat ``indices`` of ``x``."""
    flat = x.data.reshape(-1)
    out = np.empty(len(indices), dtype=np.float64)
    with no_grad():
        for k, i in enumerate(indices):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x).data)
            flat[i] = orig - h
            fm = float(f(x).data)
            flat[i] = orig
            out[k] = (fp - fm) / (2 * h)
    return out


def finite_diff_grad(f, x, h=1e-4):
    """Full central-difference gradient of scalar ``f`` with respect to ``x``."""
    g = finite_diff_entries(f, x, range(x.size), h)
    return Tensor(g.reshape(x.shape))


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    __slots__ = ("m", "v", "t")

    def __init__(self, param):
        self.m = np.zeros_like(param.data)
        self.v = np.zeros_like(param.data)
        self.t = 0


def adam_step(params, states, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8, t=None):
    """One bias-corrected Adam update, in place.

    ``states`` is a list of :class:`AdamState` parallel to ``params``. When
    ``t`` is omitted each state's own counter is advanced.
    """
    for p, st in zip(params, states):
        if p.grad is None:
            raise UsageError("adam_step: parameter has no gradient buffer")
        step = st.t + 1 if t is None else t
        if step < 1:
            raise UsageError("adam_step: step index must be >= 1")
        st.t = step
        dt = p.dtype.type
        g = p.grad
        st.m *= dt(beta1)
        st.m += dt(1 - beta1) * g
        st.v *= dt(beta2)
        st.v += dt(1 - beta2) * (g * g)
        mhat = st.m / dt(1 - beta1**step)
        vhat = st.v / dt(1 - beta2**step)
        p.data -= dt(lr) * mhat / (np.sqrt(vhat) + dt(eps))


class Adam:
    def __init__(self, params, lr=2e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.states = [AdamState(p) for p in self.params]
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        adam_step(self.params, self.states, self.lr, self.beta1, self.beta2, self.eps)
