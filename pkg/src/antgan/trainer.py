"""Adversarial training loop, replay buffers and checkpoint-based translation."""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from . import models as M
from . import phantoms as P
from . import tensor as T
from .errors import ConfigError, ContractError, DimensionError, DivergenceError, NumericError, UsageError

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iter", "g_adv_a2n", "g_adv_n2a", "cc_ac", "cc_nc", "am", "d_n", "d_a")
FINAL_CHECKPOINT = "model_final.antw"
DIVERGED_CHECKPOINT = "model_diverged.antw"
LOSS_LOG = "losses.csv"


@dataclass
class TrainConfig:
    scale: M.ArchScale = field(default_factory=M.ArchScale)
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    enable_shortcut: bool = True
    enable_am: bool = True
    enable_ac: bool = True
    enable_nc: bool = True
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 2000
    buffer_capacity: int = 50
    seed: int = 0
    split_seed: int = 0
    checkpoint_every: int = 0
    dataset_path: str = ""
    out_dir: str = "run"

    def __post_init__(self):
        if isinstance(self.scale, dict):
            self.scale = M.ArchScale(**self.scale)
        if isinstance(self.weights, dict):
            self.weights = L.LossWeights(**self.weights)
        if self.iterations < 0 or self.buffer_capacity < 0 or self.checkpoint_every < 0:
            raise ConfigError("iterations, buffer_capacity and checkpoint_every must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_json(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


class ReplayBuffer:
    """History of generated images served to the discriminators.

    Below capacity every pushed image is stored and returned. Once full, a
    push returns the new image with probability 1/2; otherwise it returns a
    uniformly chosen stored image and stores the new one in its slot.
    """

    def __init__(self, capacity=50):
        if capacity < 0:
            raise ConfigError("capacity must be >= 0")
        self.capacity = capacity
        self.images = []

    def __len__(self):
        return len(self.images)

    def push(self, img, rng):
        if img.requires_grad or not img.is_leaf:
            raise ContractError("replay buffer only accepts detached images")
        if self.capacity == 0:
            return img
        if len(self.images) < self.capacity:
            self.images.append(img.data.copy())
            return img
        if rng.random() < 0.5:
            return img
        k = int(rng.integers(self.capacity))
        old = self.images[k]
        self.images[k] = img.data.copy()
        return T.Tensor(old)


def replay_push(buf, img, rng):
    return buf.push(img, rng)


@contextlib.contextmanager
def frozen(params):
    """Stop ``params`` from being recorded on the tape inside the block."""
    prev = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in zip(params, prev):
            p.requires_grad = flag


@dataclass
class TrainResult:
    checkpoint: Path
    loss_log: Path
    rows: list
    networks: tuple


def _fmt(v):
    return f"{float(v):.9g}"


def train(cfg, progress_every=100):
    """Train both generators and both discriminators; return a :class:`TrainResult`."""
    if not cfg.dataset_path:
        raise ConfigError("dataset_path is required")
    pools = P.load_dataset(cfg.dataset_path, cfg.split_seed)
    if not pools.train_normal or not pools.train_abnormal:
        raise ConfigError("training pools must contain both normal and abnormal samples")
    if pools.size != cfg.scale.image_size:
        raise ConfigError(f"dataset images are {pools.size}px but scale.image_size is {cfg.scale.image_size}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(cfg.seed).spawn(6)
    g_a2n = M.build_generator(cfg.scale, cfg.enable_shortcut, np.random.default_rng(ss[0]))
    g_n2a = M.build_generator(cfg.scale, cfg.enable_shortcut, np.random.default_rng(ss[1]))
    d_n = M.build_discriminator(cfg.scale, np.random.default_rng(ss[2]))
    d_a = M.build_discriminator(cfg.scale, np.random.default_rng(ss[3]))
    data_rng = np.random.default_rng(ss[4])
    replay_rng = np.random.default_rng(ss[5])
    nets = (g_a2n, g_n2a, d_n, d_a)

    adam = dict(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    g_params = g_a2n.parameters() + g_n2a.parameters()
    d_params = d_n.parameters() + d_a.parameters()
    opt_g = T.Adam(g_params, **adam)
    opt_dn = T.Adam(d_n.parameters(), **adam)
    opt_da = T.Adam(d_a.parameters(), **adam)
    buf_n = ReplayBuffer(cfg.buffer_capacity)
    buf_a = ReplayBuffer(cfg.buffer_capacity)
    w = cfg.weights
    form = w.adv_form

    log_path = out_dir / LOSS_LOG
    rows = []
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for it in range(1, cfg.iterations + 1):
            sa = P.sample(pools.train_abnormal, data_rng)
            sn = P.sample(pools.train_normal, data_rng)
            xa, xn = T.Tensor(sa.batch()), T.Tensor(sn.batch())
            try:
                with frozen(d_params):
                    fake_n = g_a2n(xa)
                    fake_a = g_n2a(xn)
                    adv_a2n = L.loss_gan_g(d_n, fake_n, form)
                    adv_n2a = L.loss_gan_g(d_a, fake_a, form)
                with T.no_grad() if not cfg.enable_ac else contextlib.nullcontext():
                    cc_ac = L.l1(g_n2a(fake_n), xa)
                with T.no_grad() if not cfg.enable_nc else contextlib.nullcontext():
                    cc_nc = L.l1(g_a2n(fake_a), xn)
                mask = sa.mask[None]
                if cfg.enable_am:
                    am = L.loss_am(fake_n, xa, mask, w.am_reduction)
                else:
                    am = L.loss_am(fake_n.detach(), xa, mask, w.am_reduction)
                total = L.loss_full(
                    adv_a2n,
                    adv_n2a,
                    cc_ac if cfg.enable_ac else None,
                    cc_nc if cfg.enable_nc else None,
                    am if cfg.enable_am else None,
                    w,
                )
                opt_g.zero_grad()
                T.backward(total)
                opt_g.step()

                hist_n = buf_n.push(fake_n.detach(), replay_rng)
                hist_a = buf_a.push(fake_a.detach(), replay_rng)
                opt_dn.zero_grad()
                loss_dn = L.loss_gan_d(d_n, xn, hist_n, form)
                T.backward(loss_dn)
                opt_dn.step()
                opt_da.zero_grad()
                loss_da = L.loss_gan_d(d_a, xa, hist_a, form)
                T.backward(loss_da)
                opt_da.step()
                for p in g_params + d_params:
                    if not np.isfinite(p.data).all():
                        raise NumericError("non-finite parameter after update")
            except NumericError as exc:
                diag = out_dir / DIVERGED_CHECKPOINT
                M.save_networks(diag, *nets)
                raise DivergenceError(f"training diverged at iteration {it}: {exc}", it, diag) from exc

            row = (it, adv_a2n.item(), adv_n2a.item(), cc_ac.item(), cc_nc.item(), am.item(),
                   loss_dn.item(), loss_da.item())
            rows.append(row)
            writer.writerow([it] + [_fmt(v) for v in row[1:]])
            if cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
                M.save_networks(out_dir / f"model_{it:06d}.antw", *nets)
            if progress_every and it % progress_every == 0:
                log.info("iter %d  " + "  ".join(f"{c}=%.4f" for c in LOG_COLUMNS[1:]), *row)

    final = out_dir / FINAL_CHECKPOINT
    M.save_networks(final, *nets)
    return TrainResult(final, log_path, rows, nets)


def read_loss_log(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != LOG_COLUMNS:
            raise UsageError(f"{path}: unexpected loss log header {header}")
        return [(int(r[0]), *map(float, r[1:])) for r in reader]


def _as_batch(img, size):
    arr = np.asarray(img, dtype=np.float32)
    if arr.size != size * size:
        raise DimensionError(f"image has {arr.size} pixels, checkpoint expects {size}x{size}")
    return arr.reshape(1, 1, size, size)


def run_generator(g, images):
    """Apply generator ``g`` to 2-D [-1, 1] images; returns (S, S) arrays."""
    out = []
    with T.no_grad():
        for img in images:
            y = M.generator_forward(g, T.Tensor(_as_batch(img, g.scale.image_size)))
            out.append(y.data[0, 0].copy())
    return out


def translate(checkpoint, direction, images, out_dir=None):
    """Translate images with ``G_A2N`` (``"a2n"``) or ``G_N2A`` (``"n2a"``).

    When ``out_dir`` is given, writes ``out_XXXX.pgm`` and the difference map
    ``diff_XXXX.pgm`` (|x - G(x)| in [0, 2], rendered 0 -> black, 2 -> white).
    """
    if direction not in ("a2n", "n2a"):
        raise UsageError("direction must be 'a2n' or 'n2a'")
    g_a2n, g_n2a, _, _ = (
        checkpoint if isinstance(checkpoint, tuple) else M.load_networks(checkpoint)
    )
    g = g_a2n if direction == "a2n" else g_n2a
    images = [_as_batch(im, g.scale.image_size)[0, 0] for im in images]
    outputs = run_generator(g, images)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, (x, y) in enumerate(zip(images, outputs)):
            P.export_image(y, out_dir / f"out_{i:04d}.pgm")
            P.export_image(np.abs(x - y) - 1.0, out_dir / f"diff_{i:04d}.pgm")
    return outputs
