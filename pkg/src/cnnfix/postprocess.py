"""Outlier filtering, heat maps and boxes from image-plane fixations.

Points are ``(x, y)`` integer pairs with ``x`` the row and ``y`` the column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

DEFAULT_MIN_FRACTION = 0.05
DEFAULT_RADIUS_FRACTION = 0.10
DEFAULT_SIGMA_FRACTION = 0.04
TRUNCATE = 3.0


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel box; ``x`` runs over rows and ``y`` over columns."""
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min + 1) * (self.y_max - self.y_min + 1)

    def contains(self, x, y) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def image_diagonal(shape) -> float:
    h, w = shape[-2:]
    return float(np.hypot(h, w))


def _points(points) -> np.ndarray:
    if hasattr(points, "coords"):
        points = points.coords
    pts = np.asarray(points, dtype=np.int64)
    return pts.reshape(-1, 2)


def remove_outliers(points, min_fraction: float = DEFAULT_MIN_FRACTION,
                    radius: float | None = None, image_shape=None) -> np.ndarray:
    """Drop points with fewer than ``min_fraction`` of all points within ``radius``.

    Counts include the point itself and are taken against the unfiltered set.
    ``radius`` defaults to 10% of the image diagonal, which then requires
    ``image_shape``.
    """
    if not 0.0 <= min_fraction <= 1.0:
        raise ValueError(f"min_fraction must be in [0, 1], got {min_fraction}")
    if radius is None:
        if image_shape is None:
            raise ValueError("give a radius or an image_shape to derive it from")
        radius = DEFAULT_RADIUS_FRACTION * image_diagonal(image_shape)
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    pts = _points(points)
    n = len(pts)
    if n == 0:
        return pts
    need = min_fraction * n
    r2 = float(radius) * float(radius)
    counts = np.empty(n, dtype=np.int64)
    block = 2048
    p64 = pts.astype(np.float64)
    for lo in range(0, n, block):
        d = p64[lo:lo + block, None, :] - p64[None, :, :]
        counts[lo:lo + block] = ((d * d).sum(axis=2) <= r2).sum(axis=1)
    return pts[counts >= need]


def heatmap_from_fixations(points, image_shape, sigma: float | None = None) -> np.ndarray:
    """Gaussian-blurred impulse map scaled to a maximum of 1.

    The kernel is truncated at ``round(3 * sigma)`` pixels per axis and the
    border is zero padded. ``sigma`` defaults to 4% of the image diagonal.
    """
    h, w = image_shape[-2:]
    if sigma is None:
        sigma = DEFAULT_SIGMA_FRACTION * image_diagonal((h, w))
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    pts = _points(points)
    impulses = np.zeros((h, w), dtype=np.float64)
    if len(pts) == 0:
        return impulses
    if (pts < 0).any() or (pts[:, 0] >= h).any() or (pts[:, 1] >= w).any():
        raise ValueError("fixation outside the image")
    np.add.at(impulses, (pts[:, 0], pts[:, 1]), 1.0)
    blurred = gaussian_filter(impulses, sigma, mode="constant", cval=0.0, truncate=TRUNCATE)
    return blurred / blurred.max()


def bbox_from_fixations(points) -> BoundingBox | None:
    """Tightest box around the points, or None when there are none."""
    pts = _points(points)
    if len(pts) == 0:
        return None
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    return BoundingBox(int(lo[0]), int(lo[1]), int(hi[0]), int(hi[1]))
