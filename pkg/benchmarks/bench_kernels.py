"""Compare the compiled and numpy convolution kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times im2col / col2im alone, then a conv2d forward + backward pass and one
full training iteration at desk scale with each backend swapped in.
"""

import argparse
import timeit

import numpy as np

from antgan import _fallback, kernels
from antgan import tensor as T

try:
    from antgan import _kernels
except ImportError:
    _kernels = None

SHAPES = [
    # (label, N, C, H, k, stride, pad)
    ("Conv1 64px 7x7", 1, 1, 64, 7, 1, 3),
    ("Conv2 64px 3x3 s2", 1, 16, 64, 3, 2, 1),
    ("RB 16px 3x3", 1, 64, 16, 3, 1, 1),
    ("Disc 64px 4x4 s2", 1, 1, 64, 4, 2, 1),
]


def _backends():
    out = [("numpy", _fallback)]
    if _kernels is not None:
        out.append(("cython", _kernels))
    return out


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_unfold(repeat):
    rng = np.random.default_rng(0)
    print(f"{'case':24s} {'backend':8s} {'im2col ms':>10s} {'col2im ms':>10s}")
    for label, n, c, h, k, s, p in SHAPES:
        xp = rng.standard_normal((n, c, h + 2 * p, h + 2 * p)).astype(np.float32)
        ho = (h + 2 * p - k) // s + 1
        for name, mod in _backends():
            cols = mod.im2col(xp, k, k, s, ho, ho)
            t1 = _best(lambda: mod.im2col(xp, k, k, s, ho, ho), repeat)
            t2 = _best(lambda: mod.col2im(cols, c, xp.shape[2], xp.shape[3], k, k, s, ho, ho), repeat)
            print(f"{label:24s} {name:8s} {t1 * 1e3:10.3f} {t2 * 1e3:10.3f}")


def bench_conv(repeat):
    rng = np.random.default_rng(1)
    print(f"\n{'conv fwd+bwd':24s} {'backend':8s} {'ms':>10s}")
    for label, n, c, h, k, s, p in SHAPES:
        x = T.Tensor(rng.standard_normal((n, c, h, h)).astype(np.float32), requires_grad=True)
        w = T.Tensor(rng.standard_normal((max(c, 16), c, k, k)).astype(np.float32) * 0.02, requires_grad=True)
        b = T.Tensor(np.zeros(w.shape[0], np.float32), requires_grad=True)

        def step():
            T.backward(T.sum(T.conv2d(x, w, b, s, p)))

        for name, mod in _backends():
            kernels._impl = mod
            print(f"{label:24s} {name:8s} {_best(step, repeat) * 1e3:10.3f}")


def bench_iteration(repeat):
    from antgan import losses as L
    from antgan import models as M

    s = M.ArchScale()
    g1, g2 = M.build_generator(s, seed=0), M.build_generator(s, seed=1)
    d = M.build_discriminator(s, seed=2)
    x = T.Tensor(np.random.default_rng(2).uniform(-1, 1, (1, 1, 64, 64)).astype(np.float32))

    def step():
        fake = g1(x)
        loss = L.loss_full(L.loss_gan_g(d, fake), None, L.l1(g2(fake), x))
        T.backward(loss)

    print(f"\n{'generator step 64px':24s} {'backend':8s} {'ms':>10s}")
    for name, mod in _backends():
        kernels._impl = mod
        print(f"{'':24s} {name:8s} {_best(step, max(3, repeat // 5)) * 1e3:10.1f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; showing the numpy backend only\n")
    original = kernels._impl
    try:
        bench_unfold(args.repeat)
        bench_conv(args.repeat)
        bench_iteration(args.repeat)
    finally:
        kernels._impl = original


if __name__ == "__main__":
    main()
