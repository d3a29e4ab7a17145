"""Binary mask morphology and point geometry primitives.

Masks are 2D boolean numpy arrays indexed [y, x]. Points live in continuous
image coordinates; the pixel under a point is (floor(x), floor(y)) and pixel
(ix, iy) has its center at (ix + 0.5, iy + 0.5). Everything outside the
raster counts as background.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image
from scipy import ndimage


class EmptyMask(ValueError):
    """Raised when an operation requires at least one foreground pixel."""


class StructuringElement(Enum):
    """3x3 morphology footprint: 4-connected cross (default) or full square."""

    CROSS4 = "cross4"
    SQUARE8 = "square8"

    def footprint(self) -> np.ndarray:
        if self is StructuringElement.CROSS4:
            return np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        return np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")

    def distance_to(self, other: "Point2D") -> float:
        return float(np.hypot(self.x - other.x, self.y - other.y))


def as_mask(bits) -> np.ndarray:
    """Validate and normalize a mask to a 2D boolean array."""
    m = np.asarray(bits, dtype=bool)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"mask must be 2D non-empty, got shape {m.shape}")
    return m


def erode(
    mask: np.ndarray,
    iterations: int,
    element: StructuringElement = StructuringElement.CROSS4,
) -> np.ndarray:
    """Binary erosion; pixels beyond the border are treated as background."""
    mask = as_mask(mask)
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return mask.copy()
    return ndimage.binary_erosion(
        mask, structure=element.footprint(), iterations=iterations, border_value=0
    )


def dilate(
    mask: np.ndarray,
    iterations: int,
    element: StructuringElement = StructuringElement.CROSS4,
) -> np.ndarray:
    """Binary dilation, clipped to the raster bounds."""
    mask = as_mask(mask)
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return mask.copy()
    return ndimage.binary_dilation(
        mask, structure=element.footprint(), iterations=iterations, border_value=0
    )


def complement(mask: np.ndarray) -> np.ndarray:
    return ~as_mask(mask)


def foreground_pixels(mask: np.ndarray) -> np.ndarray:
    """(n, 2) int array of (y, x) indices of foreground pixels, row-major order."""
    ys, xs = np.nonzero(as_mask(mask))
    return np.stack([ys, xs], axis=1)


def project_point_to_mask(point: Point2D, mask: np.ndarray) -> Point2D:
    """Center of the foreground pixel nearest to `point`.

    Ties are broken by smallest (y, x); raises EmptyMask on an empty mask.
    """
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyMask("cannot project onto an empty mask")
    cx = xs + 0.5
    cy = ys + 0.5
    d2 = (cx - point.x) ** 2 + (cy - point.y) ** 2
    # nonzero() yields row-major (y, x) order, so the first minimum is the
    # lexicographic tie-break winner
    i = int(np.argmin(d2))
    return Point2D(float(cx[i]), float(cy[i]))


def distance_ratio_gate(
    original_pair: tuple[Point2D, Point2D],
    projected_pair: tuple[Point2D, Point2D],
    lo: float = 0.3,
    hi: float = 1.7,
) -> bool:
    """Accept iff dist(projected)/dist(original) lies in [lo, hi].

    A zero original distance (coincident fingertips) is always rejected.
    """
    d_orig = original_pair[0].distance_to(original_pair[1])
    if d_orig == 0.0:
        return False
    ratio = projected_pair[0].distance_to(projected_pair[1]) / d_orig
    return lo <= ratio <= hi


def mask_contains(mask: np.ndarray, point: Point2D) -> bool:
    """True iff the pixel under (floor(x), floor(y)) is in bounds and foreground."""
    mask = as_mask(mask)
    ix = int(np.floor(point.x))
    iy = int(np.floor(point.y))
    if ix < 0 or iy < 0 or iy >= mask.shape[0] or ix >= mask.shape[1]:
        return False
    return bool(mask[iy, ix])


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as an 8-bit grayscale image (0 background, 255 foreground)."""
    img = (as_mask(mask).astype(np.uint8)) * 255
    Image.fromarray(img, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    img = np.asarray(Image.open(path).convert("L"))
    return img >= 128
