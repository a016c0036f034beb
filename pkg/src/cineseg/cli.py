"""Command-line entry point: ``cineseg {train,compare,predict,augment,selftest}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure
(divergence, degenerate statistics, failed self-test), 4 I/O failure.
"""

import argparse
import csv
import dataclasses
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .augmentation import AugPolicy, augment_batch
from .config import load_config, load_datasets
from .dataio import (
    DatasetManifest,
    ManifestEntry,
    load_checkpoint,
    load_manifest,
    load_mask,
    load_pgm,
    save_checkpoint,
    save_mask,
    save_pgm,
    write_manifest,
)
from .errors import (
    ConfigError,
    ContractError,
    DegenerateStatisticsError,
    DivergenceError,
    IntegrityError,
    ParseError,
    ShapeError,
)
from .images import Grayscale2D
from .metrics import REPORT_COLUMNS, extract_contour
from .network import VARIANTS, build
from .training import evaluate_model, predict_masks, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

VARIANT_ORDER = ("ibu", "lnu", "bnu", "unet")
VARIANT_LABELS = {"ibu": "IBU-Net", "lnu": "LNU-Net", "bnu": "BNU-Net", "unet": "U-Net"}
COMPARE_COLUMNS = REPORT_COLUMNS + ("status",)


def exit_code_for(exc):
    if isinstance(exc, (ConfigError, ContractError, ShapeError)):
        return EXIT_CONFIG
    if isinstance(exc, (DivergenceError, DegenerateStatisticsError, FloatingPointError, ArithmeticError)):
        return EXIT_NUMERIC
    if isinstance(exc, (OSError, ParseError, IntegrityError)):
        return EXIT_IO
    return 1


def _err(msg):
    print(f"cineseg: {msg}", file=sys.stderr)


# -- shared pieces -------------------------------------------------------------


def _apply_overrides(run, seed=None, out=None):
    if seed is not None:
        run.train = dataclasses.replace(run.train, seed=seed)
    if out is not None:
        run.output_dir = Path(out)
    elif not run.output_dir.is_absolute():
        run.output_dir = run.base_dir / run.output_dir
    return run


def _aug_policy(run, on):
    """Policy for an augmentation setting: the configured one, or the defaults
    when the config leaves augmentation switched off."""
    if not on:
        return None
    p = run.augment
    if p.multiplicity > 1 and p.any_transform:
        return p
    return AugPolicy()


def _eval_split(data):
    for name in ("test", "val", "train"):
        if data[name]:
            return name, data[name]
    raise ContractError("no samples to evaluate")


def _train_cell(run, network_config, policy, data=None):
    """Train one network under ``run``; returns (net, log, report, split name)."""
    data = data if data is not None else load_datasets(run)
    net = build(network_config, seed=run.train.seed)
    net, log = train(net, data["train"], run.train, val_data=data["val"] or None, policy=policy)
    split, samples = _eval_split(data)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = evaluate_model(net, samples, run.train.threshold)
    return net, log, report, split


def _write_rows(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        wr.writeheader()
        for row in rows:
            wr.writerow(row)


# -- verbs ---------------------------------------------------------------------


def cmd_train(config_path, seed=None, out=None, aug=None):
    """Train, then write checkpoint.cseg, train_log.csv, report.txt and report.csv."""
    try:
        run = _apply_overrides(load_config(config_path), seed, out)
        run.output_dir.mkdir(parents=True, exist_ok=True)
        policy = run.augment if aug is None else _aug_policy(run, aug)
        aug_on = policy is not None and policy.multiplicity > 1
        try:
            net, log, report, split = _train_cell(run, run.network, policy)
        except DivergenceError as exc:
            if exc.net is not None:
                save_checkpoint(exc.net, run.output_dir / "checkpoint_last_good.cseg",
                                {"status": "diverged", "train": run.train.to_dict()})
            if exc.log is not None:
                exc.log.write_csv(run.output_dir / "train_log.csv")
            raise
        meta = {"train": run.train.to_dict(), "augmented": bool(aug_on)}
        save_checkpoint(net, run.output_dir / "checkpoint.cseg", meta)
        log.write_csv(run.output_dir / "train_log.csv")
        (run.output_dir / "report.txt").write_text(f"split = {split}\n" + report.to_text(), encoding="utf-8")
        label = VARIANT_LABELS.get(_variant_of(run.network.norm_scheme), run.network.norm_scheme)
        _write_rows(run.output_dir / "report.csv", [report.csv_row(label, aug_on)], REPORT_COLUMNS)
    except Exception as exc:
        code = exit_code_for(exc)
        _err(str(exc))
        return code
    print(f"dice_mean={report.dice_mean:.4f} apd_mm={report.apd_mm:.4f} ({split}, n={report.n_cases})")
    print(f"wrote {run.output_dir}")
    return EXIT_OK


def _variant_of(scheme):
    for name, s in VARIANTS.items():
        if s == scheme:
            return name
    return scheme


def _compare_cell(args):
    run, variant, aug_on = args
    cfg = dataclasses.replace(run.network, norm_scheme=VARIANTS[variant])
    row = {"model": VARIANT_LABELS[variant], "augmented": "yes" if aug_on else "no"}
    try:
        _, _, report, _ = _train_cell(run, cfg, _aug_policy(run, aug_on))
    except Exception as exc:
        code = exit_code_for(exc)
        kind = "diverged" if code == EXIT_NUMERIC else "failed"
        row.update({c: "" for c in COMPARE_COLUMNS if c not in row})
        row["status"] = f"{kind}: {type(exc).__name__}: {exc}"
        return row, code
    row.update(report.csv_row(row["model"], aug_on))
    row["status"] = "ok"
    return row, EXIT_OK


def parse_variants(text):
    if text is None:
        return list(VARIANT_ORDER)
    names = [v.strip().lower() for v in text.split(",") if v.strip()]
    if not names:
        raise ConfigError("at least one variant is required", field="variants")
    for v in names:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(VARIANT_ORDER)}", field="variants")
    return names


def _aug_settings(aug):
    aug = aug or "both"
    if aug not in ("both", "on", "off"):
        raise ConfigError("must be both, on or off", field="aug")
    return {"both": (True, False), "on": (True,), "off": (False,)}[aug]


def _workers():
    raw = os.environ.get("CINESEG_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"CINESEG_THREADS must be an integer, got {raw!r}") from None


def cmd_compare(config_path, variants=None, aug="both", seed=None, out=None):
    """Train every (variant, augmentation) cell and write compare.csv.

    Rows follow the variant order given, with-augmentation row first. A
    failed cell becomes a row whose ``status`` explains the failure; the
    exit code is then that of the first failure.
    """
    try:
        run = _apply_overrides(load_config(config_path), seed, out)
        names = parse_variants(variants)
        settings = _aug_settings(aug)
        workers = _workers()
        run.output_dir.mkdir(parents=True, exist_ok=True)
    except Exception as exc:
        code = exit_code_for(exc)
        _err(str(exc))
        return code
    cells = [(run, v, a) for v in names for a in settings]
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as pool:
            results = list(pool.map(_compare_cell, cells))
    else:
        results = [_compare_cell(c) for c in cells]
    path = run.output_dir / "compare.csv"
    try:
        _write_rows(path, [r for r, _ in results], COMPARE_COLUMNS)
    except OSError as exc:
        _err(str(exc))
        return EXIT_IO
    for row, _ in results:
        print(f"{row['model']:8s} aug={row['augmented']:3s} dice={row['dice_mean'] or '-'} status={row['status']}")
    print(f"wrote {path}")
    return next((c for _, c in results if c), EXIT_OK)


def _pad_to(mask, h, w):
    mh, mw = mask.shape
    top, left = (h - mh) // 2, (w - mw) // 2
    out = np.zeros((h, w), dtype=np.uint8)
    out[top:top + mh, left:left + mw] = mask
    return out


def overlay(image, mask):
    """Copy of the image with the mask's boundary pixels set to full intensity."""
    px = image.pixels.copy()
    pts = extract_contour(mask).points.astype(np.intp)
    px[pts[:, 0], pts[:, 1]] = 1.0
    return Grayscale2D(px, image.spacing_mm)


def _inputs(path):
    path = Path(path)
    if path.is_dir():
        return sorted(p for p in path.iterdir() if p.suffix.lower() == ".pgm")
    return [path]


def cmd_predict(checkpoint, input_path, out, threshold=0.5):
    """Write ``<stem>_mask.pgm`` and ``<stem>_overlay.pgm`` for each input image."""
    try:
        net = load_checkpoint(checkpoint)
        files = _inputs(input_path)
        if not files:
            raise FileNotFoundError(f"no .pgm files in {input_path}")
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
    except Exception as exc:
        code = exit_code_for(exc)
        _err(str(exc))
        return code
    status = EXIT_OK
    for f in files:
        try:
            image = load_pgm(f)
            h, w = image.shape
            net.output_shape(h, w)
            pred = predict_masks(net, image.pixels[None, None], threshold)[0]
            mask = _pad_to(pred.pixels, h, w)
            save_mask(mask, out / f"{f.stem}_mask.pgm")
            save_pgm(overlay(image, mask), out / f"{f.stem}_overlay.pgm")
        except Exception as exc:
            code = exit_code_for(exc)
            _err(f"{f}: {exc}")
            status = max(status, code)
            continue
        print(f"{f.name}: {int(mask.sum())} foreground pixels")
    return status


def cmd_augment(config_path, in_manifest, out, seed=None):
    """Write originals plus augmented copies as PGM pairs with a new manifest.csv."""
    try:
        run = _apply_overrides(load_config(config_path), seed, out)
        manifest = load_manifest(in_manifest)
        spacing = run.data.spacing_mm
        pairs = [(load_pgm(e.image, spacing), load_mask(e.mask)) for e in manifest.entries]
        augmented = augment_batch(pairs, run.augment, run.train.seed)
        outdir = run.output_dir
        (outdir / "images").mkdir(parents=True, exist_ok=True)
        (outdir / "masks").mkdir(parents=True, exist_ok=True)
        n = len(pairs)
        entries = []
        for k, (im, m) in enumerate(augmented):
            src = manifest.entries[k % n] if n else None
            copy = k // n
            name = f"{k:05d}_{src.image.stem}_c{copy}.pgm"
            img_path, mask_path = outdir / "images" / name, outdir / "masks" / name
            save_pgm(im, img_path)
            save_mask(m, mask_path)
            entries.append(ManifestEntry(src.patient_id, src.split, img_path, mask_path))
        write_manifest(DatasetManifest(entries, outdir), outdir / "manifest.csv")
    except Exception as exc:
        code = exit_code_for(exc)
        _err(str(exc))
        return code
    print(f"wrote {len(entries)} pairs to {outdir}")
    return EXIT_OK


def cmd_selftest(seed=0, verbose=True):
    from .selftest import run_selftest

    ok = run_selftest(seed, verbose)
    return EXIT_OK if ok else EXIT_NUMERIC


# -- argument parsing ----------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="cineseg", description="U-Net variants for LV segmentation")
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("train", help="train one network and write checkpoint + report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--aug", choices=("on", "off"))

    p = sub.add_parser("compare", help="train each variant with and without augmentation")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", help="comma list from ibu,lnu,bnu,unet (default: all)")
    p.add_argument("--aug", choices=("both", "on", "off"), default="both")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = sub.add_parser("predict", help="segment PGM images with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="a .pgm file or a directory of them")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)

    p = sub.add_parser("augment", help="expand a manifest with augmented copies")
    p.add_argument("--config", required=True)
    p.add_argument("--input", required=True, help="input manifest.csv")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)

    p = sub.add_parser("selftest", help="gradient checks and metric oracles")
    p.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verb == "train":
        aug = None if args.aug is None else args.aug == "on"
        return cmd_train(args.config, args.seed, args.out, aug)
    if args.verb == "compare":
        return cmd_compare(args.config, args.variants, args.aug, args.seed, args.out)
    if args.verb == "predict":
        if not 0.0 < args.threshold < 1.0:
            _err("--threshold must lie in (0, 1)")
            return EXIT_CONFIG
        return cmd_predict(args.checkpoint, args.input, args.out, args.threshold)
    if args.verb == "augment":
        return cmd_augment(args.config, args.input, args.out, args.seed)
    return cmd_selftest(args.seed)


if __name__ == "__main__":
    sys.exit(main())
