"""Evaluation metrics and the ablation harness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import models as M
from . import phantoms as P
from .errors import UndefinedMetricError, UsageError, ValidationError

PEAK = 2.0
PSNR_CAP = 99.0
SEG_THRESHOLD = 0.1

# ablation variants in table order: (label, flag overrides)
VARIANTS = {
    "gan": ("GAN", dict(enable_ac=False, enable_nc=False, enable_shortcut=False, enable_am=False)),
    "gan_ac": ("GAN + AC", dict(enable_ac=True, enable_nc=False, enable_shortcut=False, enable_am=False)),
    "gan_nc": ("GAN + NC", dict(enable_ac=False, enable_nc=True, enable_shortcut=False, enable_am=False)),
    "cyclegan": (
        "GAN + AC + NC (CycleGAN)",
        dict(enable_ac=True, enable_nc=True, enable_shortcut=False, enable_am=False),
    ),
    "shortcut": (
        "GAN + AC + NC + Shortcut",
        dict(enable_ac=True, enable_nc=True, enable_shortcut=True, enable_am=False),
    ),
    "full": (
        "GAN + AC + NC + Shortcut + AM",
        dict(enable_ac=True, enable_nc=True, enable_shortcut=True, enable_am=True),
    ),
}


def _arr(x):
    return np.asarray(x.data if hasattr(x, "requires_grad") else x, dtype=np.float64)


def _binary(x, what):
    a = np.asarray(x.data if hasattr(x, "requires_grad") else x)
    if not np.isin(a, (0, 1)).all():
        raise ValidationError(f"{what} must be binary")
    return a.astype(bool)


def psnr(a, b, mask=None):
    """PSNR in dB for data in [-1, 1] (peak 2), capped at 99 dB.

    With ``mask``, only pixels where the mask is 0 enter the MSE.
    """
    a, b = _arr(a), _arr(b)
    if a.shape != b.shape:
        raise ValidationError(f"psnr: shape mismatch {a.shape} vs {b.shape}")
    diff = (a - b) ** 2
    if mask is not None:
        keep = ~_binary(mask, "mask").reshape(a.shape)
        if not keep.any():
            raise UndefinedMetricError("mask excludes every pixel")
        diff = diff[keep]
    mse = float(diff.mean())
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(PEAK**2 / mse))


def dice(pred, truth):
    """Dice overlap 2|P&T|/(|P|+|T|); two empty masks score 1."""
    p, t = _binary(pred, "pred"), _binary(truth, "truth")
    if p.shape != t.shape:
        raise ValidationError("dice: shape mismatch")
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def diff_map_segment(x, gx, threshold=SEG_THRESHOLD):
    """Binary mask of pixels where ``|x - gx| > threshold``."""
    x, gx = _arr(x), _arr(gx)
    if x.shape != gx.shape:
        raise ValidationError("diff_map_segment: shape mismatch")
    return (np.abs(x - gx) > threshold).astype(np.uint8)


@dataclass
class EvalReport:
    masked_psnr_abnormal: float
    identity_psnr_normal: float
    dice_threshold_seg: float
    n_abnormal: int = 0
    n_normal: int = 0
    variants: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def evaluate_generator(generate, pools):
    """Score an image-to-image function on the test pools.

    ``generate`` maps a list of 2-D images to a list of outputs. All images
    are generated first; masks are only consulted afterwards, for scoring.
    """
    abnormal, normal = pools.test_abnormal, pools.test_normal
    if not abnormal or not normal:
        raise UsageError("evaluation needs non-empty normal and abnormal test pools")
    xa = [s.image[0] for s in abnormal]
    xn = [s.image[0] for s in normal]
    ya = generate(xa)
    yn = generate(xn)

    masks = [s.mask[0] for s in abnormal]
    masked = [psnr(x, y, m) for x, y, m in zip(xa, ya, masks)]
    ident = [psnr(x, y) for x, y in zip(xn, yn)]
    dices = [dice(diff_map_segment(x, y), m) for x, y, m in zip(xa, ya, masks)]
    return EvalReport(
        float(np.mean(masked)), float(np.mean(ident)), float(np.mean(dices)), len(xa), len(xn)
    )


def evaluate(checkpoint, pools):
    """Evaluate ``G_A2N`` from a checkpoint path or a loaded network tuple."""
    from .trainer import run_generator

    if isinstance(checkpoint, tuple):
        g = checkpoint[0]
    else:
        path = Path(checkpoint)
        if not path.exists():
            raise UsageError(f"checkpoint {path} does not exist")
        g = M.load_networks(path)[0]
    if pools.size != g.scale.image_size:
        raise UsageError(f"test images are {pools.size}px, checkpoint expects {g.scale.image_size}px")
    return evaluate_generator(lambda imgs: run_generator(g, imgs), pools)


def order_variants(names):
    unknown = [n for n in names if n not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variants {unknown}; choose from {list(VARIANTS)}")
    return [n for n in VARIANTS if n in set(names)]


def ablate(base_cfg, variants, out_dir, train_fn=None):
    """Train and evaluate each variant under identical seeds and data.

    Writes ``<out_dir>/<variant>/`` (checkpoint, loss log, ``report.json``)
    plus ``ablation.json`` and ``ablation.txt``. Returns ``{variant: EvalReport}``
    in table order.
    """
    from .trainer import train

    train_fn = train_fn or train
    out_dir = Path(out_dir)
    pools = P.load_dataset(base_cfg.dataset_path, base_cfg.split_seed)
    reports = {}
    for name in order_variants(variants):
        cfg = base_cfg.replace(out_dir=str(out_dir / name), **VARIANTS[name][1])
        result = train_fn(cfg)
        rep = evaluate(result.checkpoint, pools)
        rep.to_json(Path(cfg.out_dir) / "report.json")
        reports[name] = rep
    (out_dir / "ablation.json").write_text(
        json.dumps({k: v.to_dict() for k, v in reports.items()}, indent=2) + "\n"
    )
    (out_dir / "ablation.txt").write_text(format_table(reports))
    return reports


def format_table(reports):
    header = ("Model", "Masked PSNR dB", "Identity PSNR dB", "Dice")
    rows = [
        (VARIANTS[k][0] if k in VARIANTS else k, f"{r.masked_psnr_abnormal:.2f}",
         f"{r.identity_psnr_normal:.2f}", f"{r.dice_threshold_seg:.3f}")
        for k, r in reports.items()
    ]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = []
    for i, row in enumerate([header, *rows]):
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
