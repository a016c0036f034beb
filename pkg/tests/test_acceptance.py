"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import csv
import time

import numpy as np
import pytest

from cineseg import tensor as T
from cineseg.augmentation import AugPolicy, affine, augment_batch, elastic, random_transform
from cineseg.cli import COMPARE_COLUMNS, main
from cineseg.dataio import decode_checkpoint, encode_checkpoint, gen_phantom
from cineseg.images import DEFAULT_SPACING, Grayscale2D, MaskImage
from cineseg.metrics import apd, dice, evaluate, extract_contour, sensitivity
from cineseg.network import VARIANTS, NetworkConfig, build
from cineseg.normalization import (
    NormParams,
    RunningStats,
    BINGate,
    batch_instance_norm,
    batch_norm,
    instance_norm,
    layer_norm,
)
from cineseg.selftest import GRAD_TOL, brute_apd, brute_dice, brute_sensitivity, grad_cases, network_case
from cineseg.training import TrainConfig, evaluate_model, train


@pytest.fixture
def verdict(capsys):
    def report(name, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} [{name}] {detail}")
        assert ok, detail

    return report


def _extra_grad_cases(rng):
    def rand(*shape):
        return T.Tensor(rng.normal(size=shape), requires_grad=True)

    w = rng.normal(size=(2, 3, 4, 4))
    ws = rng.normal(size=(2, 3, 1, 1))
    x, y = rand(2, 3, 4, 4), rand(2, 3, 4, 4)
    return [
        ("relu", lambda x: T.sum_all(T.mul(T.relu(x), w)), [x]),
        ("add/sub", lambda x, y: T.sum_all(T.mul(T.sub(T.add(x, y), T.mul(y, y)), w)), [x, y]),
        ("reshape+sum_axes", lambda x: T.sum_all(T.mul(T.sum_axes(T.reshape(x, (2, 3, 16, 1)), (2,)), ws)),
         [rand(2, 3, 4, 4)]),
        ("mean_all", lambda x: T.mul(T.mean_all(T.mul(x, x)), 3.0), [rand(2, 3, 4, 4)]),
        ("standardize", lambda x: T.sum_all(T.mul(T.standardize(x, (2, 3))[0], w)), [rand(2, 3, 4, 4)]),
    ]


# 1 ---------------------------------------------------------------------------------


def test_criterion_1_gradient_correctness(verdict):
    t0 = time.perf_counter()
    worst = {}
    for seed in range(20):
        rng = np.random.default_rng(seed)
        for name, f, inputs in grad_cases(rng) + _extra_grad_cases(rng):
            worst[name] = max(worst.get(name, 0.0), T.grad_check(f, inputs))
    for scheme in VARIANTS.values():
        name, f, params = network_case(np.random.default_rng(100), scheme)
        worst[name] = T.grad_check(f, params)
    elapsed = time.perf_counter() - t0
    name, err = max(worst.items(), key=lambda kv: kv[1])
    ok = err < GRAD_TOL and elapsed < 120
    verdict("1 gradient correctness", ok,
            f"{len(worst)} cases x 20 instances, worst {name} rel err {err:.2e}, {elapsed:.1f}s")


# 2 ---------------------------------------------------------------------------------


def test_criterion_2_normalization_axes(verdict):
    worst_mean = worst_var = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        shape = tuple(int(v) for v in rng.integers(2, 7, size=4))
        x = T.Tensor(rng.normal(rng.uniform(-5, 5), rng.uniform(0.1, 5), size=shape))
        c = shape[1]
        unit = NormParams.unit(c, eps=1e-12)
        for y, axes in ((batch_norm(x, unit, RunningStats.fresh(c), "train"), (0, 2, 3)),
                        (layer_norm(x, unit), (1, 2, 3)),
                        (instance_norm(x, unit), (2, 3))):
            worst_mean = max(worst_mean, np.abs(y.data.mean(axis=axes)).max())
            worst_var = max(worst_var, np.abs(y.data.var(axis=axes) - 1).max())
    ok = worst_mean < 1e-8 and worst_var < 1e-6
    verdict("2 normalization axis contract", ok, f"max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}")


# 3 ---------------------------------------------------------------------------------


def test_criterion_3_bin_endpoints(verdict):
    e1 = e0 = elin = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(3, 4, 5, 5)) * rng.uniform(0.5, 4, size=(3, 1, 1, 1)) + rng.normal(size=(3, 4, 1, 1))
        p = NormParams.unit(4)
        p.gamma.data = rng.uniform(0.5, 1.5, 4)
        p.beta.data = rng.normal(size=4)

        def bin_(rho):
            gate = BINGate(T.Tensor(np.asarray(rho, dtype=float), requires_grad=True))
            return batch_instance_norm(T.Tensor(x), p, RunningStats.fresh(4), gate, "train").data

        y1, y0 = bin_([1.0] * 4), bin_([0.0] * 4)
        e1 = max(e1, np.abs(y1 - batch_norm(T.Tensor(x), p, RunningStats.fresh(4), "train").data).max())
        e0 = max(e0, np.abs(y0 - instance_norm(T.Tensor(x), p).data).max())
        rho = rng.uniform(0, 1, 4)
        r = rho[None, :, None, None]
        elin = max(elin, np.abs(bin_(rho) - (r * y1 + (1 - r) * y0)).max())
    ok = e1 <= 1e-12 and e0 <= 1e-12 and elin <= 1e-10
    verdict("3 BIN endpoints", ok, f"rho=1 {e1:.1e}, rho=0 {e0:.1e}, linearity {elin:.1e}")


# 4 ---------------------------------------------------------------------------------


def test_criterion_4_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    bad_counts = 0
    for _ in range(1000):
        h, w = rng.integers(1, 16, size=2)
        p = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        t = (rng.random((h, w)) < rng.random()).astype(np.uint8)
        bad_counts += dice(p, t) != brute_dice(p, t)
        bad_counts += sensitivity(p, t) != brute_sensitivity(p, t)

    bad_apd = checked = 0
    while checked < 100:
        sp = tuple(rng.uniform(0.5, 2.0, size=2))
        a = (rng.random((14, 14)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        b = (rng.random((14, 14)) < rng.uniform(0.2, 0.8)).astype(np.uint8)
        ca, cb = extract_contour(a, sp), extract_contour(b, sp)
        if len(ca) == 0 or len(cb) == 0:
            continue
        bad_apd += apd(ca, cb) != brute_apd(ca.points.tolist(), cb.points.tolist(), sp)
        checked += 1

    t = np.zeros((4, 4), np.uint8)
    t[0] = 1
    half = np.zeros_like(t)
    half[0, :2] = half[1, :2] = 1
    half_dice = dice(half, t)
    rep = evaluate([t, half], [t, t])
    derived = half_dice == 0.5 and rep.dice_mean == 0.75 and rep.dice_std == 0.25
    ok = bad_counts == 0 and bad_apd == 0 and derived
    verdict("4 metric oracles", ok,
            f"{bad_counts} dice/sens mismatches in 1000 pairs, {bad_apd} apd mismatches in 100 contours, "
            f"half-overlap {half_dice}, two-case mean {rep.dice_mean} std {rep.dice_std}")


# 5 ---------------------------------------------------------------------------------

BENCH_EPOCHS = 80


def _bench_run(scheme, seed):
    pairs = gen_phantom(70, 32, 32, seed=seed)
    cfg = NetworkConfig(depth=2, base_channels=8, activation="elu", padding="same", norm_scheme=scheme)
    net = build(cfg, seed=seed)
    tc = TrainConfig(epochs=BENCH_EPOCHS, batch_size=16, learning_rate=1e-3, optimizer="adam",
                     loss="soft_dice", seed=seed)
    net, _ = train(net, pairs[:50], tc)
    return evaluate_model(net, pairs[50:], warn=False)


@pytest.mark.slow
def test_criterion_5_phantom_benchmark(verdict):
    t0 = time.perf_counter()
    ibu = [_bench_run("instance_batch_first", s) for s in range(3)]
    unet = [_bench_run("none", s) for s in range(3)]
    elapsed = time.perf_counter() - t0
    ibu_dice = float(np.mean([r.dice_mean for r in ibu]))
    ibu_apd = float(np.mean([r.apd_mm for r in ibu]))
    unet_dice = float(np.mean([r.dice_mean for r in unet]))
    apd_limit = 2 * DEFAULT_SPACING[0]
    ok = ibu_dice >= 0.90 and ibu_apd <= apd_limit and unet_dice <= ibu_dice + 0.01 and elapsed < 600
    verdict("5 phantom benchmark", ok,
            f"IBU dice {ibu_dice:.4f} apd {ibu_apd:.3f} mm (limit {apd_limit:.2f}), "
            f"U-Net dice {unet_dice:.4f}, {BENCH_EPOCHS} epochs x 3 seeds, {elapsed:.0f}s")


# 6 ---------------------------------------------------------------------------------


def _random_policy(rng):
    lo = rng.uniform(0.5, 1.0)
    return AugPolicy(
        multiplicity=int(rng.integers(1, 4)),
        affine=bool(rng.random() < 0.5),
        rotation=bool(rng.random() < 0.5),
        elastic=bool(rng.random() < 0.5),
        rotate_deg=rng.uniform(0, 180),
        scale_min=lo,
        scale_max=rng.uniform(lo, 2.0),
        shift_frac=rng.uniform(0, 0.3),
        elastic_alpha=rng.uniform(0, 60),
        elastic_sigma=rng.uniform(0.5, 6),
    )


def test_criterion_6_augmentation_contract(verdict):
    rng = np.random.default_rng(6)
    img = Grayscale2D(rng.random((24, 24)))
    mask = MaskImage((rng.random((24, 24)) > 0.5).astype(np.uint8))
    ai, am = affine(img, mask)
    ei, em = elastic(img, mask, 0.0, 4.0, np.random.default_rng(0))
    identities = all(np.array_equal(a.pixels, b.pixels) for a, b in ((ai, img), (am, mask), (ei, img), (em, mask)))

    nonbinary = 0
    for k in range(500):
        policy = _random_policy(rng)
        _, m = random_transform(img, mask, policy, np.random.default_rng(k))
        nonbinary += not set(np.unique(m.pixels)) <= {0, 1}

    pairs = gen_phantom(5, 32, 32, seed=6)
    runs = [augment_batch(pairs, AugPolicy(multiplicity=3), seed=11) for _ in range(2)]
    same = all(np.array_equal(a[0].pixels, b[0].pixels) and np.array_equal(a[1].pixels, b[1].pixels)
               for a, b in zip(*runs))
    ok = identities and nonbinary == 0 and same
    verdict("6 augmentation contract", ok,
            f"identities exact: {identities}, non-binary masks in 500 policies: {nonbinary}, rerun identical: {same}")


# 7 ---------------------------------------------------------------------------------


def test_criterion_7_persistence(verdict):
    x = np.random.default_rng(7).random((3, 1, 32, 32))
    details = []
    ok = True
    for variant, scheme in VARIANTS.items():
        net = build(NetworkConfig(depth=2, base_channels=4, norm_scheme=scheme), seed=7)
        train(net, gen_phantom(4, 32, 32, seed=7), TrainConfig(epochs=1, batch_size=2))
        before = net.forward(x, "eval").data
        back, _ = decode_checkpoint(encode_checkpoint(net))
        params_equal = all(n1 == n2 and np.array_equal(p.data, q.data)
                           for (n1, p), (n2, q) in zip(net.named_parameters(), back.named_parameters()))
        buffers_equal = all(np.array_equal(getattr(o1, a1), getattr(o2, a2))
                            for (_, o1, a1), (_, o2, a2) in zip(net.named_buffers(), back.named_buffers()))
        outputs_equal = np.array_equal(before, back.forward(x, "eval").data)
        ok &= params_equal and buffers_equal and outputs_equal
        details.append(f"{variant}={'ok' if params_equal and buffers_equal and outputs_equal else 'DIFF'}")
    verdict("7 persistence", ok, ", ".join(details))


# 8 ---------------------------------------------------------------------------------

HARNESS = """
[data]
phantom_count = 12
train_count = 8
test_count = 4

[network]
depth = 1
base_channels = 4

[train]
epochs = 2
batch_size = 4
seed = 3
"""


def test_criterion_8_replication_harness(verdict, tmp_path):
    cfg = tmp_path / "harness.ini"
    cfg.write_text(HARNESS)
    codes, texts = [], []
    for run in ("a", "b"):
        codes.append(main(["compare", "--config", str(cfg), "--out", str(tmp_path / run)]))
        texts.append((tmp_path / run / "compare.csv").read_text())
    rows = list(csv.DictReader(texts[0].splitlines()))
    header = texts[0].splitlines()[0].split(",")
    cells = [(r["model"], r["augmented"]) for r in rows]
    expected = [(m, a) for m in ("IBU-Net", "LNU-Net", "BNU-Net", "U-Net") for a in ("yes", "no")]
    ok = (codes == [0, 0] and len(rows) == 8 and header == list(COMPARE_COLUMNS) and cells == expected
          and texts[0] == texts[1])
    verdict("8 replication harness", ok,
            f"exit codes {codes}, {len(rows)} rows, columns {header}, reruns identical: {texts[0] == texts[1]}")
