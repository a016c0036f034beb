"""Image containers shared by augmentation, metrics and data I/O."""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

# midpoint of the 1.3-1.4 mm in-plane resolution of the cine data
DEFAULT_SPACING = (1.35, 1.35)


@dataclass
class Grayscale2D:
    pixels: np.ndarray
    spacing_mm: tuple = DEFAULT_SPACING

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 2 or self.pixels.size == 0:
            raise ContractError(f"image must be a non-empty 2-D array, got shape {self.pixels.shape}")
        self.spacing_mm = tuple(float(s) for s in self.spacing_mm)
        if len(self.spacing_mm) != 2 or min(self.spacing_mm) <= 0:
            raise ContractError(f"spacing must be two positive values, got {self.spacing_mm}")

    @property
    def shape(self):
        return self.pixels.shape


@dataclass
class MaskImage:
    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels)
        if p.ndim != 2:
            raise ContractError(f"mask must be 2-D, got shape {p.shape}")
        if not np.isin(p, (0, 1)).all():
            raise ContractError("mask pixels must be 0 or 1")
        self.pixels = p.astype(np.uint8)

    @property
    def shape(self):
        return self.pixels.shape

    @property
    def area(self):
        return int(self.pixels.sum())


def as_mask(m):
    return m if isinstance(m, MaskImage) else MaskImage(np.asarray(m))


def as_image(im):
    return im if isinstance(im, Grayscale2D) else Grayscale2D(np.asarray(im))
