"""Paired image/mask augmentation: affine, rotation and elastic deformation.

All transforms inverse-map each output pixel into the source image. Images
are resampled bilinearly, masks by nearest neighbour so they stay binary.
Samples falling outside the source read as 0 (background).
"""

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import kernels
from .errors import ConfigError, ContractError
from .images import Grayscale2D, MaskImage, as_image, as_mask
from .seeding import mix_seed

_SNAP = 1e-9


@dataclass
class AugPolicy:
    multiplicity: int = 2
    affine: bool = True
    rotation: bool = True
    elastic: bool = True
    rotate_deg: float = 15.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    shift_frac: float = 0.1
    elastic_alpha: float = 34.0
    elastic_sigma: float = 4.0

    @classmethod
    def disabled(cls):
        return cls(multiplicity=1, affine=False, rotation=False, elastic=False)

    def validate(self):
        if self.multiplicity < 1:
            raise ConfigError("must be >= 1", field="multiplicity")
        if not 0 < self.scale_min <= self.scale_max:
            raise ConfigError("need 0 < scale_min <= scale_max", field="scale_min")
        if self.shift_frac < 0 or self.rotate_deg < 0:
            raise ConfigError("ranges must be non-negative", field="shift_frac")
        if self.elastic_alpha < 0:
            raise ConfigError("must be >= 0", field="elastic_alpha")
        if self.elastic_sigma <= 0:
            raise ConfigError("must be > 0", field="elastic_sigma")
        return self

    @property
    def any_transform(self):
        return self.affine or self.rotation or self.elastic

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown augmentation fields {sorted(unknown)}")
        return cls(**d)


@dataclass
class DisplacementField:
    dx: np.ndarray
    dy: np.ndarray
    alpha: float
    sigma: float


def _snap(a):
    r = np.round(a)
    return np.where(np.abs(a - r) < _SNAP, r, a)


def _resample(image, mask, rows, cols):
    rows = _snap(rows)
    cols = _snap(cols)
    img = kernels.bilinear_sample(image.pixels, rows, cols)
    msk = kernels.nearest_sample(mask.pixels, rows, cols)
    return Grayscale2D(img, image.spacing_mm), MaskImage(msk)


def affine(image, mask, rotate_deg=0.0, scale=1.0, shift_x=0.0, shift_y=0.0):
    """Rotate (counter-clockwise as displayed), scale and shift about the centre.

    ``shift_x`` moves content right, ``shift_y`` moves it down, both in pixels.
    """
    image, mask = as_image(image), as_mask(mask)
    if scale <= 0:
        raise ContractError(f"scale must be positive, got {scale}")
    if image.shape != mask.shape:
        raise ContractError(f"image {image.shape} and mask {mask.shape} differ in size")
    if rotate_deg == 0 and scale == 1 and shift_x == 0 and shift_y == 0:
        return Grayscale2D(image.pixels.copy(), image.spacing_mm), MaskImage(mask.pixels.copy())
    h, w = image.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    yp = rr - cy - shift_y
    xp = cc - cx - shift_x
    th = math.radians(rotate_deg)
    cos, sin = math.cos(th), math.sin(th)
    cols = (cos * xp - sin * yp) / scale + cx
    rows = (sin * xp + cos * yp) / scale + cy
    return _resample(image, mask, rows, cols)


def rotate(image, mask, degrees):
    return affine(image, mask, rotate_deg=degrees)


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian truncated at radius ceil(3 sigma)."""
    r = max(1, math.ceil(3.0 * sigma))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return k / k.sum()


def displacement_field(shape, alpha, sigma, rng):
    """Smoothed uniform noise scaled by ``alpha``; draws dx then dy from ``rng``."""
    if alpha < 0 or sigma <= 0:
        raise ContractError(f"need alpha >= 0 and sigma > 0, got alpha={alpha} sigma={sigma}")
    h, w = shape
    raw_dx = rng.uniform(-1.0, 1.0, size=(h, w))
    raw_dy = rng.uniform(-1.0, 1.0, size=(h, w))
    k = gaussian_kernel(sigma)
    dx = kernels.smooth_reflect(raw_dx, k) * alpha
    dy = kernels.smooth_reflect(raw_dy, k) * alpha
    return DisplacementField(dx, dy, alpha, sigma)


def warp(image, mask, field):
    image, mask = as_image(image), as_mask(mask)
    h, w = image.shape
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return _resample(image, mask, rr + field.dy, cc + field.dx)


def elastic(image, mask, alpha, sigma, rng):
    image, mask = as_image(image), as_mask(mask)
    if image.shape != mask.shape:
        raise ContractError(f"image {image.shape} and mask {mask.shape} differ in size")
    field = displacement_field(image.shape, alpha, sigma, rng)
    return warp(image, mask, field)


def random_transform(image, mask, policy, rng):
    """One augmented copy: affine/rotation first, then elastic."""
    image, mask = as_image(image), as_mask(mask)
    h, w = image.shape
    if policy.affine or policy.rotation:
        rot = rng.uniform(-policy.rotate_deg, policy.rotate_deg) if policy.rotation else 0.0
        if policy.affine:
            scale = rng.uniform(policy.scale_min, policy.scale_max)
            sx = rng.uniform(-policy.shift_frac, policy.shift_frac) * w
            sy = rng.uniform(-policy.shift_frac, policy.shift_frac) * h
        else:
            scale, sx, sy = 1.0, 0.0, 0.0
        image, mask = affine(image, mask, rot, scale, sx, sy)
    if policy.elastic:
        image, mask = elastic(image, mask, policy.elastic_alpha, policy.elastic_sigma, rng)
    return image, mask


def augment_batch(pairs, policy, seed):
    """Originals followed by ``multiplicity - 1`` augmented copies of every pair.

    Copy ``j`` of pair ``i`` draws from its own generator seeded with
    ``mix_seed(seed, i, j)``, so the result does not depend on processing order.
    """
    policy.validate()
    pairs = [(as_image(im), as_mask(m)) for im, m in pairs]
    out = list(pairs)
    for j in range(1, policy.multiplicity):
        for i, (im, m) in enumerate(pairs):
            rng = np.random.default_rng(mix_seed(seed, i, j))
            if policy.any_transform:
                out.append(random_transform(im, m, policy, rng))
            else:
                out.append((Grayscale2D(im.pixels.copy(), im.spacing_mm), MaskImage(m.pixels.copy())))
    return out
