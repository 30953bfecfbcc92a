"""Training mask construction from single-point annotations.

One expert click per cell becomes a Gaussian peak; the peaks are combined by
pointwise maximum (summation would merge nearby cells above threshold),
thresholded at 0.5 and dilated with a square kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .morphology import dilate

SUPPORTED_KERNELS = (5, 7, 9, 11, 13)


@dataclass(frozen=True)
class MaskSpec:
    sigma: float = 6.0
    dilation_k: int = 13
    threshold: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.dilation_k not in SUPPORTED_KERNELS:
            raise ValueError(
                f"dilation kernel must be one of {SUPPORTED_KERNELS}, got {self.dilation_k}"
            )


@dataclass
class PointAnnotationSet:
    """One (x, y) pixel per cell, origin at the top-left corner."""

    points: list[tuple[int, int]]
    image_id: str = ""
    scan_type: str = "H"

    def __post_init__(self):
        self.points = [(int(x), int(y)) for x, y in self.points]
        if len(set(self.points)) != len(self.points):
            raise ValueError(f"duplicate annotation points in {self.image_id!r}")
        if self.scan_type not in ("H", "N"):
            raise ValueError(f"scan_type must be 'H' or 'N', got {self.scan_type!r}")

    def check_bounds(self, extents: tuple[int, int]) -> None:
        w, h = extents
        for x, y in self.points:
            if not (0 <= x < w and 0 <= y < h):
                raise ValueError(f"point ({x}, {y}) outside {w}x{h} image {self.image_id!r}")

    def __len__(self) -> int:
        return len(self.points)


def density_surface(
    points: PointAnnotationSet | list[tuple[int, int]],
    sigma: float,
    extents: tuple[int, int],
) -> np.ndarray:
    """Max-combined Gaussian peaks, value exactly 1.0 at each point.

    extents is (width, height); the result is a float32 (height, width)
    array. Contributions below ~1e-8 (beyond 6.1 sigma) are truncated.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    w, h = int(extents[0]), int(extents[1])
    pts = points.points if isinstance(points, PointAnnotationSet) else list(points)
    if isinstance(points, PointAnnotationSet):
        points.check_bounds((w, h))
    surface = np.zeros((h, w), dtype=np.float32)
    radius = int(math.ceil(6.1 * sigma))
    inv = 1.0 / (2.0 * sigma * sigma)
    for x, y in pts:
        x, y = int(x), int(y)
        y0, y1 = max(0, y - radius), min(h, y + radius + 1)
        x0, x1 = max(0, x - radius), min(w, x + radius + 1)
        dy = np.arange(y0, y1, dtype=np.float64) - y
        dx = np.arange(x0, x1, dtype=np.float64) - x
        kernel = np.exp(-(dy[:, None] ** 2 + dx[None, :] ** 2) * inv).astype(np.float32)
        np.maximum(surface[y0:y1, x0:x1], kernel, out=surface[y0:y1, x0:x1])
    return surface


def make_mask(surface: np.ndarray, spec: MaskSpec) -> np.ndarray:
    """Threshold the density surface and dilate with a square kernel."""
    core = surface > spec.threshold
    return dilate(core, spec.dilation_k)


def mask_from_points(
    points: PointAnnotationSet | list[tuple[int, int]],
    extents: tuple[int, int],
    spec: MaskSpec,
) -> np.ndarray:
    """Convenience: density_surface followed by make_mask."""
    return make_mask(density_surface(points, spec.sigma, extents), spec)
