"""Quick self-checks run by ``cineseg selftest``.

Gradient checks compare autodiff against central differences on small
random inputs; metric checks compare against brute-force set counting and
an all-pairs contour distance.
"""

import math

import numpy as np

from . import tensor as T
from .metrics import apd, dice, extract_contour, sensitivity
from .network import NetworkConfig, build
from .normalization import (
    BatchInstanceNorm2d,
    BatchNorm2d,
    InstanceNorm2d,
    LayerNorm2d,
)

GRAD_TOL = 1e-4


def _weighted(y, w):
    # a random projection keeps every gradient entry away from zero
    return T.sum_all(T.mul(y, w))


def grad_cases(rng):
    """(name, f, inputs) triples; each f returns a scalar tensor."""

    def rand(*shape):
        return T.Tensor(rng.normal(size=shape), requires_grad=True)

    def proj(shape):
        return rng.normal(size=shape)

    cases = []
    x = rand(2, 3, 4, 4)
    w = proj((2, 3, 4, 4))
    cases.append(("elu", lambda x: _weighted(T.elu(x), w), [x]))
    x = rand(2, 3, 4, 4)
    cases.append(("sigmoid", lambda x: _weighted(T.sigmoid(x), w), [x]))
    x, t = rand(2, 3, 4, 4), (rng.random((2, 3, 4, 4)) > 0.5).astype(float)
    cases.append(("bce_with_logits", lambda x: _weighted(T.bce_with_logits(x, t), w), [x]))
    a, b = rand(2, 3, 4, 4), rand(1, 3, 1, 1)
    cases.append(("mul/div broadcast", lambda a, b: _weighted(T.div(T.mul(a, b), T.add(T.mul(b, b), 1.0)), w), [a, b]))

    for pad, k in (("valid", 3), ("same", 3), ("same", 2)):
        x, wt, bias = rand(2, 2, 5, 6), rand(3, 2, k, k), rand(3)
        out_shape = T.conv2d(x, wt, bias, pad).shape
        wc = proj(out_shape)
        cases.append((f"conv2d {pad} k={k}", lambda x, wt, bias, pad=pad, wc=wc: _weighted(T.conv2d(x, wt, bias, pad), wc),
                      [x, wt, bias]))

    x = rand(2, 2, 4, 6)
    wp = proj((2, 2, 2, 3))
    cases.append(("maxpool2", lambda x: _weighted(T.maxpool2(x), wp), [x]))
    x = rand(1, 2, 3, 2)
    wu = proj((1, 2, 6, 4))
    cases.append(("upsample2", lambda x: _weighted(T.upsample2(x), wu), [x]))
    a, b = rand(1, 2, 6, 6), rand(1, 1, 4, 4)
    wcat = proj((1, 3, 4, 4))
    cases.append(("crop+concat", lambda a, b: _weighted(T.concat_channels(T.crop_center(a, 4, 4), b), wcat), [a, b]))

    for cls in (BatchNorm2d, LayerNorm2d, InstanceNorm2d, BatchInstanceNorm2d):
        layer = cls(3)
        layer.params.gamma.data = rng.uniform(0.5, 1.5, 3)
        layer.params.beta.data = rng.normal(size=3)
        if hasattr(layer, "gate"):
            layer.gate.rho.data = rng.uniform(0.1, 0.9, 3)
        x = rand(3, 3, 4, 4)
        wn = proj((3, 3, 4, 4))
        params = layer.parameters()
        cases.append((cls.__name__, lambda x, *p, layer=layer, wn=wn: _weighted(layer(x, "train"), wn), [x] + params))
    return cases


def pool_gap(a):
    """Smallest gap between the two largest values of any 2x2 pooling window."""
    n, c, h, w = a.shape
    win = a.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(-1, 4)
    top = np.sort(win, axis=1)
    return float((top[:, -1] - top[:, -2]).min())


def network_case(rng, norm_scheme="instance_batch_first", size=12):
    """Depth-1, base-2 network in eval mode; loss is the mean of the logits.

    Inputs whose pooling windows hold a near-tie are redrawn: max is not
    differentiable there and central differences straddle the kink.
    """
    cfg = NetworkConfig(depth=1, base_channels=2, norm_scheme=norm_scheme)
    net = build(cfg, seed=int(rng.integers(2**31)))
    while True:
        x = T.Tensor(rng.uniform(-2, 2, size=(2, 1, size, size)))
        with T.no_grad():
            net.forward(x, "train")  # gives the running statistics non-trivial values
            if pool_gap(net.encoders[0](x, "eval").data) > 1e-3:
                break
    return (f"depth-1 network ({norm_scheme})", lambda *p: T.mean_all(net.forward(x, "eval")), net.parameters())


def brute_dice(p, t):
    P = {(i, j) for i, j in zip(*np.nonzero(p))}
    Q = {(i, j) for i, j in zip(*np.nonzero(t))}
    if not P and not Q:
        return 1.0
    return 2 * len(P & Q) / (len(P) + len(Q))


def brute_sensitivity(p, t):
    P = {(i, j) for i, j in zip(*np.nonzero(p))}
    Q = {(i, j) for i, j in zip(*np.nonzero(t))}
    return 1.0 if not Q else len(P & Q) / len(Q)


def brute_apd(a, b, spacing):
    def one_way(src, dst):
        ds = []
        for r, c in src:
            best = min(((r - r2) * spacing[0]) ** 2 + ((c - c2) * spacing[1]) ** 2 for r2, c2 in dst)
            ds.append(math.sqrt(best))
        return math.fsum(ds) / len(ds)

    return 0.5 * (one_way(a, b) + one_way(b, a))


def run_selftest(seed=0, verbose=True):
    rng = np.random.default_rng(seed)
    results = []
    for name, f, inputs in grad_cases(rng) + [network_case(rng)]:
        err = T.grad_check(f, inputs)
        results.append((f"grad {name}", err < GRAD_TOL, f"max rel err {err:.2e}"))

    bad = 0
    for _ in range(200):
        p = rng.random((8, 8)) < rng.random()
        t = rng.random((8, 8)) < rng.random()
        bad += dice(p.astype(np.uint8), t.astype(np.uint8)) != brute_dice(p, t)
        bad += sensitivity(p.astype(np.uint8), t.astype(np.uint8)) != brute_sensitivity(p, t)
    results.append(("dice/sensitivity vs set counting", bad == 0, f"{bad} mismatches in 200 pairs"))

    bad = 0
    spacing = (1.35, 1.1)
    for _ in range(20):
        p = (rng.random((10, 10)) < 0.5).astype(np.uint8)
        t = (rng.random((10, 10)) < 0.5).astype(np.uint8)
        cp, ct = extract_contour(p, spacing), extract_contour(t, spacing)
        if len(cp) == 0 or len(ct) == 0:
            continue
        bad += apd(cp, ct) != brute_apd(cp.points.tolist(), ct.points.tolist(), spacing)
    results.append(("apd vs all-pairs distance", bad == 0, f"{bad} mismatches"))

    if verbose:
        for name, ok, detail in results:
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return all(ok for _, ok, _ in results)
