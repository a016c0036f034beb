"""Overlap and contour-distance metrics for binary segmentations."""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ShapeError, UndefinedMetricError
from .images import DEFAULT_SPACING, as_mask

REPORT_COLUMNS = ("model", "augmented", "dice_mean", "dice_std", "sensitivity", "apd_mm", "n_cases")


@dataclass
class ContourSet:
    points: np.ndarray  # (m, 2) array of (row, col) pixel centres
    spacing_mm: tuple = DEFAULT_SPACING

    def __len__(self):
        return len(self.points)


@dataclass
class EvalReport:
    dice_mean: float
    dice_std: float
    sensitivity: float
    apd_mm: float
    n_cases: int
    n_apd_excluded: int = 0

    def to_text(self):
        keys = ("dice_mean", "dice_std", "sensitivity", "apd_mm", "n_cases", "n_apd_excluded")
        return "".join(f"{k} = {_fmt(getattr(self, k))}\n" for k in keys)

    def csv_row(self, model, augmented):
        return {
            "model": model,
            "augmented": "yes" if augmented else "no",
            "dice_mean": _fmt(self.dice_mean),
            "dice_std": _fmt(self.dice_std),
            "sensitivity": _fmt(self.sensitivity),
            "apd_mm": _fmt(self.apd_mm),
            "n_cases": str(self.n_cases),
        }


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _pair(pred, truth):
    p, t = as_mask(pred).pixels, as_mask(truth).pixels
    if p.shape != t.shape:
        raise ShapeError(f"mask shapes differ: {p.shape} vs {t.shape}")
    return p.astype(bool), t.astype(bool)


def dice(pred, truth):
    """2|P & T| / (|P| + |T|); two empty masks score 1."""
    p, t = _pair(pred, truth)
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def sensitivity(pred, truth):
    """Foreground recall TP / (TP + FN); an empty truth scores 1."""
    p, t = _pair(pred, truth)
    pos = int(t.sum())
    if pos == 0:
        return 1.0
    return int((p & t).sum()) / pos


def extract_contour(mask, spacing_mm=DEFAULT_SPACING):
    """Foreground pixels with at least one background 4-neighbour.

    Pixels outside the image count as background.
    """
    m = as_mask(mask).pixels.astype(bool)
    p = np.pad(m, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    rows, cols = np.nonzero(m & ~interior)
    pts = np.stack([rows, cols], axis=1).astype(np.float64)
    return ContourSet(pts, tuple(float(s) for s in spacing_mm))


def apd(pred, truth):
    """Symmetric average contour distance in mm.

    Mean over pred points of the distance to the nearest truth point,
    averaged with the same quantity in the other direction.
    """
    if len(pred) == 0 or len(truth) == 0:
        raise UndefinedMetricError("average perpendicular distance needs two non-empty contours")
    if tuple(pred.spacing_mm) != tuple(truth.spacing_mm):
        raise ContractError(f"contour spacings differ: {pred.spacing_mm} vs {truth.spacing_mm}")
    sp = np.asarray(pred.spacing_mm, dtype=np.float64)
    d_pt = kernels.nearest_distances(pred.points, truth.points, sp)
    d_tp = kernels.nearest_distances(truth.points, pred.points, sp)
    return 0.5 * (math.fsum(d_pt) / len(d_pt) + math.fsum(d_tp) / len(d_tp))


def evaluate(preds, truths, spacing_mm=DEFAULT_SPACING):
    """Aggregate per-case metrics into an :class:`EvalReport`.

    Dice statistics use every case (population std). Cases whose predicted
    or true contour is empty are left out of the APD mean and counted in
    ``n_apd_excluded``; if every case is excluded ``apd_mm`` is NaN.
    """
    if len(preds) != len(truths):
        raise ContractError(f"{len(preds)} predictions but {len(truths)} ground truths")
    if not preds:
        raise ContractError("evaluate needs at least one case")
    dices, sens, apds = [], [], []
    for p, t in zip(preds, truths):
        dices.append(dice(p, t))
        sens.append(sensitivity(p, t))
        cp, ct = extract_contour(p, spacing_mm), extract_contour(t, spacing_mm)
        if len(cp) and len(ct):
            apds.append(apd(cp, ct))
    excluded = len(preds) - len(apds)
    if excluded:
        warnings.warn(f"{excluded} case(s) with an empty contour excluded from APD", RuntimeWarning, stacklevel=2)
    d = np.asarray(dices)
    return EvalReport(
        dice_mean=float(d.mean()),
        dice_std=float(d.std()),
        sensitivity=float(np.mean(sens)),
        apd_mm=float(np.mean(apds)) if apds else float("nan"),
        n_cases=len(preds),
        n_apd_excluded=excluded,
    )
