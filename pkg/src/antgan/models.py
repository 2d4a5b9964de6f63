"""Generator and discriminator networks plus the ``.antw`` checkpoint format.

Generator (input S*S*1, base width b):

    Conv1   7x7 s1  IN ReLU   -> S*S*b
    Conv2   3x3 s2  IN ReLU   -> S/2*S/2*2b
    Conv3   3x3 s2  IN ReLU   -> S/4*S/4*4b
    RB x n  3x3 s1  IN        -> S/4*S/4*4b
    Deconv1 3x3 s2  IN ReLU   -> S/2*S/2*4b
    Deconv2 3x3 s2  IN ReLU   -> S*S*b
    Conv4   7x7 s1  tanh      -> S*S*1

Discriminator: five 4x4 convs with strides 2,2,2,1,1, leaky ReLU, instance
norm on layers 2-4 and a linear single-channel output. The stride-1 layers
use "same" padding (one row/column before, two after) so a 240 input maps
to a 30x30 patch grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, FormatError, UsageError

INIT_STD = 0.02
IN_EPS = 1e-5
LAYER_NAMES = ("Conv1", "Conv2", "Conv3", "Deconv1", "Deconv2", "Conv4")

CHECKPOINT_MAGIC = b"ANTW"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchScale:
    image_size: int = 64
    base_channels: int = 16
    n_res_blocks: int = 3

    def __post_init__(self):
        if self.image_size < 8 or self.image_size % 4:
            raise ConfigError(f"image_size must be a multiple of 4 and >= 8, got {self.image_size}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.n_res_blocks < 1:
            raise ConfigError(f"n_res_blocks must be >= 1, got {self.n_res_blocks}")

    @classmethod
    def full(cls):
        return cls(240, 64, 9)

    @property
    def patch_size(self):
        return self.image_size // 8


# (name, kind, kernel, stride, in channels, out channels, instance norm, activation)
def _generator_layout(scale):
    b = scale.base_channels
    layers = [
        ("conv1", "conv", 7, 1, 1, b, True, "relu"),
        ("conv2", "conv", 3, 2, b, 2 * b, True, "relu"),
        ("conv3", "conv", 3, 2, 2 * b, 4 * b, True, "relu"),
    ]
    for k in range(scale.n_res_blocks):
        layers.append((f"rb{k + 1}.conv1", "conv", 3, 1, 4 * b, 4 * b, True, "relu"))
        layers.append((f"rb{k + 1}.conv2", "conv", 3, 1, 4 * b, 4 * b, True, None))
    layers += [
        ("deconv1", "deconv", 3, 2, 4 * b, 4 * b, True, "relu"),
        ("deconv2", "deconv", 3, 2, 4 * b, b, True, "relu"),
        ("conv4", "conv", 7, 1, b, 1, False, "tanh"),
    ]
    return layers


def _discriminator_layout(scale):
    b = scale.base_channels
    return [
        ("conv1", 2, 1, b, False, True),
        ("conv2", 2, b, 2 * b, True, True),
        ("conv3", 2, 2 * b, 4 * b, True, True),
        ("conv4", 1, 4 * b, 4 * b, True, True),
        ("conv5", 1, 4 * b, 1, False, False),
    ]


def _init_layer(params, rng, name, kind, k, cin, cout, norm, dtype):
    wshape = (cout, cin, k, k) if kind == "conv" else (cin, cout, k, k)
    params[f"{name}.weight"] = T.Tensor(
        (rng.standard_normal(wshape) * INIT_STD).astype(dtype), requires_grad=True
    )
    params[f"{name}.bias"] = T.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    if norm:
        params[f"{name}.in_scale"] = T.Tensor(np.ones(cout, dtype=dtype), requires_grad=True)
        params[f"{name}.in_shift"] = T.Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)


@dataclass
class GeneratorParams:
    scale: ArchScale
    use_shortcut: bool
    params: dict = field(default_factory=dict)

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name]

    def n_parameters(self):
        return int(np.sum([p.size for p in self.params.values()]))

    def __call__(self, x, capture=None):
        return generator_forward(self, x, capture=capture)


@dataclass
class DiscriminatorParams:
    scale: ArchScale
    params: dict = field(default_factory=dict)

    def parameters(self):
        return list(self.params.values())

    def __getitem__(self, name):
        return self.params[name]

    def n_parameters(self):
        return int(np.sum([p.size for p in self.params.values()]))

    def __call__(self, x):
        return discriminator_forward(self, x)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def build_generator(scale, use_shortcut=True, seed=0, dtype=np.float32):
    """Gaussian(0, 0.02) weights, zero biases, unit/zero instance-norm affine."""
    if not isinstance(scale, ArchScale):
        raise ConfigError("scale must be an ArchScale")
    rng = _rng(seed)
    params = {}
    for name, kind, k, _stride, cin, cout, norm, _act in _generator_layout(scale):
        _init_layer(params, rng, name, kind, k, cin, cout, norm, dtype)
    return GeneratorParams(scale, bool(use_shortcut), params)


def build_discriminator(scale, seed=0, dtype=np.float32):
    if not isinstance(scale, ArchScale):
        raise ConfigError("scale must be an ArchScale")
    rng = _rng(seed)
    params = {}
    for name, _stride, cin, cout, norm, _act in _discriminator_layout(scale):
        _init_layer(params, rng, name, "conv", 4, cin, cout, norm, dtype)
    return DiscriminatorParams(scale, params)


def _conv_layer(p, name, x, stride, padding, norm, act):
    y = T.conv2d(x, p[f"{name}.weight"], p[f"{name}.bias"], stride, padding)
    if norm:
        y = T.instance_norm(y, p[f"{name}.in_scale"], p[f"{name}.in_shift"], IN_EPS)
    if act is not None:
        y = T.activation(y, act)
    return y


def _deconv_layer(p, name, x):
    y = T.conv_transpose2d(x, p[f"{name}.weight"], p[f"{name}.bias"], 2, 1, 1)
    y = T.instance_norm(y, p[f"{name}.in_scale"], p[f"{name}.in_shift"], IN_EPS)
    return T.relu(y)


def residual_block_forward(p, prefix, x):
    """``x + IN(Conv2(ReLU(IN(Conv1(x)))))`` with no activation after Conv2."""
    w = p[f"{prefix}.conv1.weight"]
    if x.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"{prefix}: expected {w.shape[1]} input channels, got shape {x.shape}")
    h = _conv_layer(p, f"{prefix}.conv1", x, 1, 1, True, "relu")
    h = _conv_layer(p, f"{prefix}.conv2", h, 1, 1, True, None)
    return T.add(x, h)


def _check_image(x, scale):
    if x.data.ndim != 4 or x.shape[1] != 1 or x.shape[2:] != (scale.image_size,) * 2:
        raise DimensionError(
            f"expected input of shape (N, 1, {scale.image_size}, {scale.image_size}), got {x.shape}"
        )


def generator_forward(g, x, capture=None):
    """Run the generator. ``capture`` (a dict) receives per-layer activations.

    With the global shortcut the output is ``tanh(conv4_linear + x)``.
    """
    _check_image(x, g.scale)
    p = g.params

    def keep(name, t):
        if capture is not None:
            capture[name] = t.data
        return t

    h = keep("Conv1", _conv_layer(p, "conv1", x, 1, 3, True, "relu"))
    h = keep("Conv2", _conv_layer(p, "conv2", h, 2, 1, True, "relu"))
    h = keep("Conv3", _conv_layer(p, "conv3", h, 2, 1, True, "relu"))
    for k in range(g.scale.n_res_blocks):
        h = keep(f"RB_{k + 1}", residual_block_forward(p, f"rb{k + 1}", h))
    h = keep("Deconv1", _deconv_layer(p, "deconv1", h))
    h = keep("Deconv2", _deconv_layer(p, "deconv2", h))
    pre = T.conv2d(h, p["conv4.weight"], p["conv4.bias"], 1, 3)
    if g.use_shortcut:
        pre = T.add(pre, x)
    return keep("Conv4", T.tanh(pre))


def discriminator_forward(d, x):
    _check_image(x, d.scale)
    h = x
    for name, stride, _cin, _cout, norm, act in _discriminator_layout(d.scale):
        padding = 1 if stride == 2 else (1, 2, 1, 2)
        h = _conv_layer(d.params, name, h, stride, padding, norm, "leaky_relu" if act else None)
    return h


def layer_shapes(g, x):
    """Return ``{layer: (H, W, C)}`` after one forward pass, in table order."""
    cap = {}
    with T.no_grad():
        generator_forward(g, x, capture=cap)
    return {k: (v.shape[2], v.shape[3], v.shape[1]) for k, v in cap.items()}


def discriminator_layer_shapes(d, x):
    shapes = {}
    h = x
    with T.no_grad():
        for name, stride, _cin, _cout, norm, act in _discriminator_layout(d.scale):
            padding = 1 if stride == 2 else (1, 2, 1, 2)
            h = _conv_layer(d.params, name, h, stride, padding, norm, "leaky_relu" if act else None)
            shapes[name.capitalize()] = (h.shape[2], h.shape[3], h.shape[1])
    return shapes


def activation_layer_names(scale):
    names = ["Conv1", "Conv2", "Conv3"]
    names += [f"RB_{k + 1}" for k in range(scale.n_res_blocks)]
    return names + ["Deconv1", "Deconv2", "Conv4"]


def dump_activations(g, x, layer, out_dir):
    """Write every channel of ``layer`` as a min-max normalized 8-bit PGM.

    Returns the written paths. A constant channel is rendered as mid-gray.
    """
    from .phantoms import write_pgm

    if layer not in activation_layer_names(g.scale):
        raise UsageError(f"unknown layer {layer!r}; choose from {activation_layer_names(g.scale)}")
    cap = {}
    with T.no_grad():
        generator_forward(g, x, capture=cap)
    act = cap[layer][0]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for c, plane in enumerate(act):
        lo, hi = float(plane.min()), float(plane.max())
        if hi > lo:
            img = np.floor((plane.astype(np.float64) - lo) / (hi - lo) * 255.0 + 0.5)
        else:
            img = np.full(plane.shape, 128.0)
        path = out_dir / f"{layer}_ch{c:03d}.pgm"
        write_pgm(path, np.clip(img, 0, 255).astype(np.uint8))
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# checkpoint format


def write_checkpoint(path, tensors):
    """Serialize an ordered ``{name: array}`` mapping to the ``.antw`` format."""
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, arr in tensors.items():
        arr = np.asarray(arr.data if isinstance(arr, T.Tensor) else arr)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_checkpoint(path):
    buf = Path(path).read_bytes()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(buf) < 8:
        raise FormatError("truncated checkpoint header", len(buf))
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    pos = 8
    out = {}

    def need(n):
        if pos + n > len(buf):
            raise FormatError("truncated checkpoint record", pos)

    while pos < len(buf):
        need(4)
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(nlen)
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        need(4)
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        need(4 * rank)
        dims = struct.unpack_from(f"<{rank}I", buf, pos)
        pos += 4 * rank
        count = int(np.prod(dims, dtype=np.int64))
        need(4 * count)
        out[name] = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
        pos += 4 * count
    return out


def networks_to_tensors(g_a2n, g_n2a, d_n, d_a):
    s = g_a2n.scale
    tensors = {
        "meta.arch": np.array(
            [s.image_size, s.base_channels, s.n_res_blocks, g_a2n.use_shortcut], dtype=np.float32
        )
    }
    for prefix, net in (("g_a2n", g_a2n), ("g_n2a", g_n2a), ("d_n", d_n), ("d_a", d_a)):
        for name, t in net.params.items():
            tensors[f"{prefix}.{name}"] = t.data
    return tensors


def save_networks(path, g_a2n, g_n2a, d_n, d_a):
    write_checkpoint(path, networks_to_tensors(g_a2n, g_n2a, d_n, d_a))


def load_networks(path, dtype=np.float32):
    """Rebuild ``(g_a2n, g_n2a, d_n, d_a)`` from a checkpoint file."""
    tensors = read_checkpoint(path)
    if "meta.arch" not in tensors:
        raise FormatError("checkpoint lacks meta.arch record", 8)
    size, base, nres, shortcut = (int(v) for v in tensors["meta.arch"])
    scale = ArchScale(size, base, nres)
    nets = (
        build_generator(scale, bool(shortcut), 0, dtype),
        build_generator(scale, bool(shortcut), 0, dtype),
        build_discriminator(scale, 0, dtype),
        build_discriminator(scale, 0, dtype),
    )
    for prefix, net in zip(("g_a2n", "g_n2a", "d_n", "d_a"), nets):
        for name, t in net.params.items():
            key = f"{prefix}.{name}"
            if key not in tensors:
                raise FormatError(f"checkpoint lacks tensor {key}", 8)
            if tensors[key].shape != t.shape:
                raise FormatError(f"tensor {key} has shape {tensors[key].shape}, expected {t.shape}", 8)
            t.data[...] = tensors[key]
    return nets
