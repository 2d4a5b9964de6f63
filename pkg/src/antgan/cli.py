"""Command-line entry point: ``antgan <subcommand> [flags]``.

Exit codes: 0 success, 1 validation or usage error, 2 numeric divergence,
3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from . import gradcheck as GC
from . import metrics as Me
from . import models as M
from . import phantoms as P
from . import trainer as Tr
from .errors import AntGanError, NumericError, UsageError

log = logging.getLogger("antgan")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
MANIFEST = "manifest.json"
REPORT = "report.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command, config, seed, dataset, outputs, name=MANIFEST):
    """Record everything needed to repeat a run, before it starts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "seed": seed,
        "config": config,
        "dataset": str(dataset) if dataset else None,
        "dataset_sha256": _sha256(dataset) if dataset and Path(dataset).exists() else None,
        "outputs": sorted(outputs),
    }
    (out_dir / name).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# ---------------------------------------------------------------------------
# config handling

_FLAG_FIELDS = {
    "dataset": "dataset_path",
    "out_dir": "out_dir",
    "iterations": "iterations",
    "seed": "seed",
    "split_seed": "split_seed",
    "lr": "lr",
    "checkpoint_every": "checkpoint_every",
    "buffer_capacity": "buffer_capacity",
}


def _add_train_flags(p):
    p.add_argument("--config", help="JSON file whose keys mirror TrainConfig")
    p.add_argument("--dataset", help="path to an .antd dataset")
    p.add_argument("--out-dir")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--buffer-capacity", type=int)
    p.add_argument("--image-size", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--res-blocks", type=int)
    p.add_argument("--lambda-cc", type=float)
    p.add_argument("--lambda-am", type=float)
    p.add_argument("--adv-form", choices=("least_squares", "log"))
    p.add_argument("--am-reduction", choices=("mean", "sum"))
    for flag in ("shortcut", "am", "ac", "nc"):
        p.add_argument(f"--{flag}", dest=f"enable_{flag}", action="store_true", default=None)
        p.add_argument(f"--no-{flag}", dest=f"enable_{flag}", action="store_false")


def resolve_config(args):
    """Merge ``--config`` JSON with flag overrides; flags win."""
    data = {}
    if args.config:
        data = Tr.TrainConfig.from_json(args.config).to_dict()
    for attr, key in _FLAG_FIELDS.items():
        val = getattr(args, attr, None)
        if val is not None:
            data[key] = val
    for flag in ("shortcut", "am", "ac", "nc"):
        val = getattr(args, f"enable_{flag}", None)
        if val is not None:
            data[f"enable_{flag}"] = val
    scale = dict(data.get("scale", {}))
    for attr, key in (("image_size", "image_size"), ("base_channels", "base_channels"),
                      ("res_blocks", "n_res_blocks")):
        if getattr(args, attr, None) is not None:
            scale[key] = getattr(args, attr)
    if scale:
        data["scale"] = scale
    weights = dict(data.get("weights", {}))
    for attr in ("lambda_cc", "lambda_am", "adv_form", "am_reduction"):
        if getattr(args, attr, None) is not None:
            weights[attr] = getattr(args, attr)
    if weights:
        data["weights"] = weights
    return Tr.TrainConfig.from_dict(data)


def _load_images(args):
    """Images in [-1, 1] from ``--images`` PGMs or a dataset split (masks untouched)."""
    if args.images:
        out = []
        for path in args.images:
            out.append(P.read_pgm(path).astype(np.float32) / np.float32(127.5) - np.float32(1.0))
        return out
    if not args.dataset:
        raise UsageError("give --images or --dataset")
    pools = P.load_dataset(args.dataset, args.split_seed)
    groups = {
        "test": pools.test_abnormal + pools.test_normal,
        "test-abnormal": pools.test_abnormal,
        "test-normal": pools.test_normal,
        "train": pools.train_abnormal + pools.train_normal,
    }
    return [s.image[0] for s in groups[args.split]]


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args):
    out = Path(args.out)
    config = {"normal": args.normal, "abnormal": args.abnormal, "size": args.size}
    write_manifest(out.parent, "gen-data", config, args.seed, None, [out.name],
                   name=f"{out.name}.manifest.json")
    path = P.make_phantoms(args.seed, args.normal, args.abnormal, args.size, out)
    print(f"wrote {args.normal + args.abnormal} samples ({args.size}x{args.size}) to {path}")
    return EXIT_OK


def cmd_train(args):
    cfg = resolve_config(args)
    out = Path(cfg.out_dir)
    outputs = [MANIFEST, Tr.LOSS_LOG, Tr.FINAL_CHECKPOINT]
    if cfg.checkpoint_every:
        outputs += [f"model_{i:06d}.antw" for i in range(cfg.checkpoint_every, cfg.iterations + 1, cfg.checkpoint_every)]
    write_manifest(out, "train", cfg.to_dict(), cfg.seed, cfg.dataset_path, outputs)
    result = Tr.train(cfg, progress_every=args.progress_every)
    print(f"checkpoint: {result.checkpoint}\nloss log: {result.loss_log}")
    return EXIT_OK


def cmd_translate(args):
    images = _load_images(args)
    out = Path(args.out_dir)
    outputs = [MANIFEST] + [f"{k}_{i:04d}.pgm" for i in range(len(images)) for k in ("out", "diff")]
    write_manifest(out, "translate", {"checkpoint": args.checkpoint, "direction": args.direction,
                                      "split": args.split, "split_seed": args.split_seed},
                   None, args.dataset, outputs)
    Tr.translate(args.checkpoint, args.direction, images, out)
    print(f"translated {len(images)} images ({args.direction}) into {out}")
    return EXIT_OK


def cmd_evaluate(args):
    out = Path(args.out_dir)
    write_manifest(out, "evaluate", {"checkpoint": args.checkpoint, "split_seed": args.split_seed},
                   None, args.dataset, [MANIFEST, REPORT])
    pools = P.load_dataset(args.dataset, args.split_seed)
    report = Me.evaluate(args.checkpoint, pools)
    report.to_json(out / REPORT)
    print(Me.format_table({"model": report}), end="")
    return EXIT_OK


def cmd_ablate(args):
    cfg = resolve_config(args)
    names = Me.order_variants([v.strip() for v in args.variants.split(",") if v.strip()])
    out = Path(cfg.out_dir)
    outputs = [MANIFEST, "ablation.json", "ablation.txt"]
    outputs += [f"{n}/{f}" for n in names for f in (Tr.LOSS_LOG, Tr.FINAL_CHECKPOINT, REPORT)]
    write_manifest(out, "ablate", dict(cfg.to_dict(), variants=names), cfg.seed, cfg.dataset_path, outputs)
    reports = Me.ablate(cfg, names, out)
    print(Me.format_table(reports), end="")
    return EXIT_OK


def cmd_grad_check(args):
    results = GC.run_suite(args.seed, networks=not args.ops_only)
    worst = GC.summarize(results)
    width = max(len(k) for k in worst)
    ok = True
    for name, err in worst.items():
        passed = err < GC.TOLERANCE
        ok &= passed
        print(f"{name.ljust(width)}  max_rel_err={err:.3e}  {'PASS' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_dump_activations(args):
    images = _load_images(args)
    if not images:
        raise UsageError("no input image")
    g_a2n, g_n2a, _, _ = M.load_networks(args.checkpoint)
    g = g_a2n if args.direction == "a2n" else g_n2a
    from . import tensor as T

    x = T.Tensor(np.asarray(images[args.index], dtype=np.float32)[None, None])
    paths = M.dump_activations(g, x, args.layer, args.out_dir)
    print(f"wrote {len(paths)} images to {args.out_dir}")
    return EXIT_OK


def _image_source(p):
    p.add_argument("--images", nargs="+", help="input PGM files")
    p.add_argument("--dataset", help="take inputs from this .antd dataset")
    p.add_argument("--split", default="test",
                   choices=("test", "test-abnormal", "test-normal", "train"))
    p.add_argument("--split-seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="antgan", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"antgan {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="write a synthetic phantom dataset")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--normal", type=int, default=200)
    p.add_argument("--abnormal", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the four networks")
    _add_train_flags(p)
    p.add_argument("--progress-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="run a trained generator on images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", choices=("a2n", "n2a"), default="a2n")
    p.add_argument("--out-dir", required=True)
    _image_source(p)
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("evaluate", help="masked PSNR, identity PSNR and Dice on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    _add_train_flags(p)
    p.add_argument("--variants", default="cyclegan,shortcut,full",
                   help=f"comma list from {','.join(Me.VARIANTS)}")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("grad-check", help="finite-difference check of every op")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true", help="skip whole-network checks")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("dump-activations", help="write per-channel feature maps of one layer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--direction", choices=("a2n", "n2a"), default="a2n")
    p.add_argument("--layer", required=True)
    p.add_argument("--index", type=int, default=0, help="which input image to use")
    p.add_argument("--out-dir", required=True)
    _image_source(p)
    p.set_defaults(func=cmd_dump_activations)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose or args.command in ("train", "ablate") else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"antgan: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except AntGanError as exc:
        print(f"antgan: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"antgan: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
