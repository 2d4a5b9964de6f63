"""Synthetic lesion phantoms and the ``.antd`` dataset file format.

Layout of an ``.antd`` file (all integers little-endian)::

    "ANTD" | version u32 | count u32 | size u32
    count x ( label u8 | size*size float32 image in [0, 1] | size*size u8 mask )

``label`` is 0 for normal and 1 for abnormal. Any set of 2-D slices can be
packed into this layout with :func:`write_dataset`; the loader maps stored
intensities ``v`` to the model domain with ``2v - 1``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ValidationError

DATASET_MAGIC = b"ANTD"
DATASET_VERSION = 1
HEADER_BYTES = 16
TRAIN_FRACTION = 0.8

NORMAL, ABNORMAL = 0, 1

BACKGROUND = 0.3
TISSUE = 0.5
TEXTURE_AMPLITUDE = 0.03
LESION_CONTRAST = (0.35, 0.45)

_mask_reads = 0


def mask_reads():
    """Number of times any :attr:`SliceSample.mask` has been accessed."""
    return _mask_reads


class SliceSample:
    """One image in [-1, 1] of shape (1, S, S) with its label and anomaly mask.

    Mask access is counted (see :func:`mask_reads`) so tests can assert that
    inference paths never look at it.
    """

    __slots__ = ("image", "label", "_mask")

    def __init__(self, image, mask, label):
        self.image = image
        self._mask = mask
        self.label = label

    @property
    def mask(self):
        global _mask_reads
        _mask_reads += 1
        return self._mask

    @property
    def is_abnormal(self):
        return self.label == ABNORMAL

    def batch(self):
        """Image as an (1, 1, S, S) array."""
        return self.image[None]


@dataclass
class DatasetPools:
    size: int
    train_normal: list = field(default_factory=list)
    train_abnormal: list = field(default_factory=list)
    test_normal: list = field(default_factory=list)
    test_abnormal: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# generation


def _grid(size):
    c = (np.arange(size) + 0.5) / size
    return np.meshgrid(c, c, indexing="ij")


def _ellipse(yy, xx, cy, cx, ry, rx, theta):
    dy, dx = yy - cy, xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = (dx * ct + dy * st) / rx
    v = (-dx * st + dy * ct) / ry
    return u * u + v * v <= 1.0


def _dilate(mask, r):
    out = mask.copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy * dy + dx * dx <= r * r:
                out |= np.roll(np.roll(mask, dy, 0), dx, 1)
    return out


def _tissue(rng, size):
    yy, xx = _grid(size)
    cy, cx = 0.5 + rng.uniform(-0.05, 0.05, 2)
    ry, rx = rng.uniform(0.32, 0.42, 2)
    theta = rng.uniform(0, np.pi)
    region = _ellipse(yy, xx, cy, cx, ry, rx, theta)
    tex = np.zeros((size, size))
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, 2)
        phase = rng.uniform(0, 2 * np.pi)
        tex += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    img = np.where(region, TISSUE + TEXTURE_AMPLITUDE * tex, BACKGROUND)
    return img, region


def _lesions(rng, size, region, max_tries=200):
    yy, xx = _grid(size)
    n = int(rng.integers(1, 4))
    mask = np.zeros((size, size), bool)
    img_add = np.zeros((size, size))
    margin = max(3, size // 20)
    inner = ~_dilate(~region, margin)
    placed = 0
    for _ in range(max_tries):
        if placed == n:
            break
        ry, rx = rng.uniform(0.05, 0.11, 2)
        cy, cx = rng.uniform(0.2, 0.8, 2)
        theta = rng.uniform(0, np.pi)
        les = _ellipse(yy, xx, cy, cx, ry, rx, theta)
        if not les.any() or not inner[les].all():
            continue
        contrast = rng.uniform(*LESION_CONTRAST)
        img_add = np.where(les, np.maximum(img_add, contrast), img_add)
        mask |= les
        placed += 1
    if placed == 0:
        raise RuntimeError("could not place a lesion inside the tissue region")
    return img_add, mask


def make_sample(rng, size, abnormal):
    """Return ``(image01, mask_u8)`` for one phantom."""
    img, region = _tissue(rng, size)
    mask = np.zeros((size, size), bool)
    if abnormal:
        add, mask = _lesions(rng, size, region)
        img = img + add
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask.astype(np.uint8)


def make_phantoms(seed, n_normal, n_abnormal, size, out_path):
    """Generate an unpaired phantom dataset and write it to ``out_path``.

    Normal and abnormal images come from independent random streams, so no
    abnormal image has a paired healthy counterpart.
    """
    if size % 4 or size < 16:
        raise ConfigError("size must be a multiple of 4 and at least 16")
    if n_normal < 1 or n_abnormal < 1:
        raise ConfigError("sample counts must be >= 1")
    ss_normal, ss_abnormal = np.random.SeedSequence(seed).spawn(2)
    rng_n = np.random.default_rng(ss_normal)
    rng_a = np.random.default_rng(ss_abnormal)
    images, masks, labels = [], [], []
    for _ in range(n_normal):
        im, m = make_sample(rng_n, size, False)
        images.append(im), masks.append(m), labels.append(NORMAL)
    for _ in range(n_abnormal):
        im, m = make_sample(rng_a, size, True)
        images.append(im), masks.append(m), labels.append(ABNORMAL)
    write_dataset(out_path, images, masks, labels)
    return Path(out_path)


# ---------------------------------------------------------------------------
# file format


def write_dataset(path, images, masks, labels):
    """Pack 2-D ``images`` in [0, 1] with binary ``masks`` into an ``.antd`` file."""
    if not (len(images) == len(masks) == len(labels)) or not images:
        raise ValidationError("images, masks and labels must be non-empty and equally long")
    size = images[0].shape[-1]
    chunks = [DATASET_MAGIC, struct.pack("<III", DATASET_VERSION, len(images), size)]
    for im, m, lab in zip(images, masks, labels):
        im = np.asarray(im, dtype="<f4").reshape(size, size)
        m = np.asarray(m).reshape(size, size)
        if im.min() < 0 or im.max() > 1:
            raise ValidationError("stored intensities must lie in [0, 1]")
        if not np.isin(m, (0, 1)).all():
            raise ValidationError("masks must be binary")
        if lab == NORMAL and m.any():
            raise ValidationError("normal samples must have an empty mask")
        chunks += [struct.pack("<B", lab), im.tobytes(), m.astype(np.uint8).tobytes()]
    Path(path).write_bytes(b"".join(chunks))


def read_dataset(path):
    """Parse an ``.antd`` file into ``(size, images01, masks, labels)``."""
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
        raise FormatError("bad dataset magic", 0)
    if len(buf) < HEADER_BYTES:
        raise FormatError("truncated dataset header", len(buf))
    version, count, size = struct.unpack_from("<III", buf, 4)
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}", 4)
    rec = 1 + 5 * size * size
    expected = HEADER_BYTES + count * rec
    if len(buf) < expected:
        k = (len(buf) - HEADER_BYTES) // rec
        raise FormatError(f"truncated dataset: record {k} of {count} incomplete", HEADER_BYTES + k * rec)
    if len(buf) > expected:
        raise FormatError("trailing bytes after last record", expected)
    images, masks, labels = [], [], []
    pos = HEADER_BYTES
    npx = size * size
    for _ in range(count):
        lab = buf[pos]
        if lab not in (NORMAL, ABNORMAL):
            raise FormatError(f"invalid label {lab}", pos)
        im = np.frombuffer(buf, "<f4", npx, pos + 1).reshape(size, size).astype(np.float32)
        m = np.frombuffer(buf, np.uint8, npx, pos + 1 + 4 * npx).reshape(size, size).copy()
        images.append(im), masks.append(m), labels.append(lab)
        pos += rec
    return size, images, masks, labels


def _split(items, rng):
    n = len(items)
    order = rng.permutation(n)
    n_train = int(n * TRAIN_FRACTION) if n > 1 else n
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def load_dataset(path, split_seed=0):
    """Load and split (80/20 per label, deterministic in ``split_seed``)."""
    size, images, masks, labels = read_dataset(path)
    normal, abnormal = [], []
    for im, m, lab in zip(images, masks, labels):
        s = SliceSample((2.0 * im - 1.0).astype(np.float32)[None], m[None], lab)
        (abnormal if lab == ABNORMAL else normal).append(s)
    rng = np.random.default_rng(split_seed)
    pools = DatasetPools(size)
    pools.train_normal, pools.test_normal = _split(normal, rng)
    pools.train_abnormal, pools.test_abnormal = _split(abnormal, rng)
    return pools


def sample(pool, rng):
    """Uniform draw with replacement."""
    if not pool:
        raise ConfigError("cannot sample from an empty pool")
    return pool[int(rng.integers(len(pool)))]


# ---------------------------------------------------------------------------
# images


def to_bytes(values):
    """Map [-1, 1] to 0..255 with round-half-up and clamping."""
    v = np.asarray(values, dtype=np.float64)
    if not np.isfinite(v).all():
        raise ValidationError("cannot export non-finite values")
    return np.clip(np.floor((v + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, img_u8):
    img_u8 = np.asarray(img_u8, dtype=np.uint8)
    h, w = img_u8.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + img_u8.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts, pos = [], 0
    while len(parts) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        parts.append(data[start:pos])
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise FormatError("only 8-bit binary PGM (P5) is supported", 0)
    w, h = int(parts[1]), int(parts[2])
    pos += 1
    if len(data) < pos + w * h:
        raise FormatError("truncated PGM pixel data", len(data))
    return np.frombuffer(data, np.uint8, w * h, pos).reshape(h, w).copy()


def export_image(t, path):
    """Write a [-1, 1] image (any shape squeezable to 2-D) as a P5 PGM."""
    arr = t.data if hasattr(t, "data") and not isinstance(t, np.ndarray) else t
    arr = np.asarray(arr)
    arr = arr.reshape(arr.shape[-2:])
    write_pgm(path, to_bytes(arr))
    return Path(path)
