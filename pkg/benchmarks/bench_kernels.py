"""Time each hot kernel under both backends, plus one end-to-end training epoch.

    python3 benchmarks/bench_kernels.py [--repeat N]

Numbers are best-of-N wall time per call. The numba column excludes JIT
compilation (one warm-up call is made first).
"""

import argparse
import timeit

import numpy as np

from cineseg import kernels
from cineseg.dataio import gen_phantom
from cineseg.network import NetworkConfig, build
from cineseg.training import TrainConfig, train


def cases(rng):
    xp = rng.normal(size=(16, 8, 34, 34))
    cols = kernels.im2col(xp, 3)
    pool_in = rng.normal(size=(16, 8, 32, 32))
    _, idx = kernels.maxpool2_forward(pool_in)
    img = rng.random((128, 128))
    rows = rng.uniform(-2, 130, size=(128, 128))
    cc = rng.uniform(-2, 130, size=(128, 128))
    kern = np.exp(-0.5 * (np.arange(-12, 13) / 4.0) ** 2)
    kern /= kern.sum()
    pts_a = rng.integers(0, 256, size=(600, 2)).astype(float)
    pts_b = rng.integers(0, 256, size=(600, 2)).astype(float)
    sp = np.array([1.35, 1.35])
    return {
        "im2col 16x8x34x34 k3": lambda: kernels.im2col(xp, 3),
        "col2im 16x8x34x34 k3": lambda: kernels.col2im(cols, 16, 8, 34, 34, 3),
        "maxpool2 fwd 16x8x32x32": lambda: kernels.maxpool2_forward(pool_in),
        "maxpool2 bwd 16x8x32x32": lambda: kernels.maxpool2_backward(rng.normal(size=(16, 8, 16, 16)), idx),
        "bilinear 128x128": lambda: kernels.bilinear_sample(img, rows, cc),
        "smooth sigma=4 128x128": lambda: kernels.smooth_reflect(img, kern),
        "nearest dist 600x600": lambda: kernels.nearest_distances(pts_a, pts_b, sp),
    }


def train_epoch():
    data = gen_phantom(50, 32, 32, seed=0)
    net = build(NetworkConfig(depth=2, base_channels=8, norm_scheme="instance_batch_first"), seed=0)
    train(net, data, TrainConfig(epochs=1, seed=0))


def best(fn, repeat):
    fn()  # warm-up / JIT
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    available = [b for b in kernels.BACKENDS if b != "numba" or kernels._numba is not None]
    prev = kernels.get_backend()
    results = {}
    try:
        for backend in available:
            kernels.set_backend(backend)
            rng = np.random.default_rng(0)
            for name, fn in cases(rng).items():
                results.setdefault(name, {})[backend] = best(fn, args.repeat)
            results.setdefault("train epoch (IBU, 50 x 32x32)", {})[backend] = best(train_epoch, max(1, args.repeat // 2))
    finally:
        kernels.set_backend(prev)

    header = f"{'kernel':34s}" + "".join(f"{b:>12s}" for b in available) + ("     speedup" if len(available) == 2 else "")
    print(header)
    for name, row in results.items():
        line = f"{name:34s}" + "".join(f"{row[b] * 1e3:10.3f}ms" for b in available)
        if len(available) == 2:
            line += f"{row['numpy'] / row['numba']:11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
