"""Finite-difference verification of every differentiable op, in float64.

Each case builds a scalar function of one input tensor; the autodiff
gradient is compared with central differences using the error measure
``max|analytic - numeric| / max(max|analytic|, max|numeric|, 0.1)``.
The floor keeps exactly-zero gradients (a bias feeding an instance norm)
from turning rounding noise into a relative error of 1.
"""

from __future__ import annotations

import numpy as np

from . import losses as L
from . import models as M
from . import tensor as T

TOLERANCE = 1e-6
GRAD_FLOOR = 0.1


def relative_error(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale_ = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), GRAD_FLOOR)
    return float(np.abs(a - n).max() / scale_)


def check(f, x, n_entries=None, rng=None, h=1e-4):
    """Compare ``backward`` with finite differences for scalar ``f(x)``.

    ``n_entries`` limits the comparison to a random subset of coordinates.
    """
    x.zero_grad()
    T.backward(f(x))
    if n_entries is None or n_entries >= x.size:
        idx = np.arange(x.size)
    else:
        idx = np.sort((rng or np.random.default_rng(0)).choice(x.size, n_entries, replace=False))
    numeric = T.finite_diff_entries(f, x, idx, h)
    return relative_error(x.grad.reshape(-1)[idx], numeric)


def _t(rng, *shape, low=None):
    a = rng.standard_normal(shape)
    if low is not None:
        # keep values away from activation kinks
        a = np.sign(a) * (np.abs(a) + low)
    return T.Tensor(a.astype(np.float64), requires_grad=True)


def _proj(out, r):
    return T.sum(T.mul(out, T.Tensor(r)))


def _cases(rng):
    """Yield ``(name, f, x)`` triples."""
    # conv2d
    for tag, stride, pad in (("s1p1", 1, 1), ("s2p1", 2, 1), ("same4", 1, (1, 2, 1, 2))):
        k = 4 if tag == "same4" else 3
        x = _t(rng, 1, 2, 5, 5)
        w = _t(rng, 3, 2, k, k)
        b = _t(rng, 3)
        r = rng.standard_normal(T.conv2d(x, w, b, stride, pad).shape)
        yield f"conv2d[{tag}].input", lambda v, w=w, b=b, s=stride, p=pad, r=r: _proj(T.conv2d(v, w, b, s, p), r), x
        yield f"conv2d[{tag}].weight", lambda v, x=x, b=b, s=stride, p=pad, r=r: _proj(T.conv2d(x, v, b, s, p), r), w
        yield f"conv2d[{tag}].bias", lambda v, x=x, w=w, s=stride, p=pad, r=r: _proj(T.conv2d(x, w, v, s, p), r), b

    x = _t(rng, 1, 3, 3, 3)
    w = _t(rng, 3, 2, 3, 3)
    b = _t(rng, 2)
    r = rng.standard_normal(T.conv_transpose2d(x, w, b, 2, 1, 1).shape)
    yield "conv_transpose2d.input", lambda v: _proj(T.conv_transpose2d(v, w, b, 2, 1, 1), r), x
    yield "conv_transpose2d.weight", lambda v: _proj(T.conv_transpose2d(x, v, b, 2, 1, 1), r), w
    yield "conv_transpose2d.bias", lambda v: _proj(T.conv_transpose2d(x, w, v, 2, 1, 1), r), b

    x = _t(rng, 1, 2, 4, 4)
    g = _t(rng, 2)
    s = _t(rng, 2)
    r = rng.standard_normal(x.shape)
    yield "instance_norm.input", lambda v: _proj(T.instance_norm(v, g, s, 1e-5), r), x
    yield "instance_norm.scale", lambda v: _proj(T.instance_norm(x, v, s, 1e-5), r), g
    yield "instance_norm.shift", lambda v: _proj(T.instance_norm(x, g, v, 1e-5), r), s

    for name, fn in (("relu", T.relu), ("leaky_relu", T.leaky_relu), ("tanh", T.tanh),
                     ("softplus", T.softplus), ("abs", T.absolute)):
        x = _t(rng, 4, 4, low=0.05)
        r = rng.standard_normal(x.shape)
        yield f"activation.{name}", lambda v, fn=fn, r=r: _proj(fn(v), r), x

    a = _t(rng, 3, 5)
    c = T.Tensor(rng.standard_normal((3, 5)))
    r = rng.standard_normal(a.shape)
    yield "elementwise.add", lambda v: _proj(T.add(v, c), r), a
    yield "elementwise.sub", lambda v: _proj(T.sub(c, v), r), a
    yield "elementwise.mul", lambda v: T.sum(T.mul(v, v)), a
    yield "elementwise.scale", lambda v: _proj(T.scale(v, -2.5), r), a
    yield "reduce.mean", lambda v: T.mean(T.mul(v, c)), a
    yield "reduce.sum", lambda v: T.sum(T.mul(v, c)), a

    # losses
    x_ab = T.Tensor(rng.uniform(-1, 1, (1, 1, 6, 6)))
    mask = (rng.random((1, 1, 6, 6)) < 0.3).astype(np.float64)
    gen = _t(rng, 1, 1, 6, 6)
    yield "losses.am", lambda v: L.loss_am(v, x_ab, mask), gen
    yield "losses.am_mean", lambda v: L.loss_am(v, x_ab, mask, "mean"), gen
    shifted = T.Tensor(x_ab.data + np.sign(rng.standard_normal(x_ab.shape)) * 0.3)
    yield "losses.l1", lambda v: L.l1(v, shifted), T.Tensor(x_ab.data.copy(), requires_grad=True)

    scale_ = M.ArchScale(16, 4, 1)
    d = M.build_discriminator(scale_, rng, np.float64)
    img = _t(rng, 1, 1, 16, 16)
    real = T.Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)))
    yield "losses.gan_g_ls", lambda v: L.loss_gan_g(d, v, "least_squares"), img
    yield "losses.gan_g_log", lambda v: L.loss_gan_g(d, v, "log"), img
    fake = T.Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)))
    w5 = d.params["conv5.weight"]
    yield "losses.gan_d_ls", lambda v: _with(d, "conv5.weight", v, lambda: L.loss_gan_d(d, real, fake)), w5
    yield "losses.gan_d_log", lambda v: _with(d, "conv5.weight", v, lambda: L.loss_gan_d(d, real, fake, "log")), w5


def _with(net, name, value, fn):
    prev = net.params[name]
    net.params[name] = value
    try:
        return fn()
    finally:
        net.params[name] = prev


def _network_cases(rng, n_entries):
    """Composite checks at 16x16: input plus a sample of each parameter tensor."""
    scale_ = M.ArchScale(16, 4, 1)
    for shortcut in (True, False):
        g = M.build_generator(scale_, shortcut, rng, np.float64)
        x = T.Tensor(rng.uniform(-0.9, 0.9, (1, 1, 16, 16)), requires_grad=True)
        r = rng.standard_normal((1, 1, 16, 16))
        tag = "generator" if shortcut else "generator[no_shortcut]"
        yield f"{tag}.input", lambda v, g=g, r=r: _proj(M.generator_forward(g, v), r), x, None
        for name in g.params:
            yield (f"{tag}.{name}",
                   lambda v, g=g, x=x, r=r, name=name: _with(g, name, v, lambda: _proj(M.generator_forward(g, x), r)),
                   g.params[name], n_entries)

    d = M.build_discriminator(scale_, rng, np.float64)
    x = T.Tensor(rng.uniform(-1, 1, (1, 1, 16, 16)), requires_grad=True)
    r = rng.standard_normal((1, 1, 2, 2))
    yield "discriminator.input", lambda v: _proj(M.discriminator_forward(d, v), r), x, None
    for name in d.params:
        yield (f"discriminator.{name}",
               lambda v, name=name: _with(d, name, v, lambda: _proj(M.discriminator_forward(d, x), r)),
               d.params[name], n_entries)


def run_suite(seed=0, networks=True, n_entries=24, network_step=1e-6):
    """Return ``{case name: relative error}`` for every check.

    Whole-network cases use a smaller step: 1e-4 perturbations of 0.02-scale
    weights move enough ReLU pre-activations across zero to swamp the check.
    """
    rng = np.random.default_rng(seed)
    results = {}
    for name, f, x in _cases(rng):
        results[name] = check(f, x)
    if networks:
        for name, f, x, n in _network_cases(rng, n_entries):
            results[name] = check(f, x, n, rng, network_step)
    return results


def summarize(results):
    """Max error per op family (text before the first '.')."""
    out = {}
    for name, err in results.items():
        key = name.split(".")[0]
        out[key] = max(out.get(key, 0.0), err)
    return out
