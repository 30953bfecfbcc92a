"""Binary morphology with square structuring elements.

A k x k square element is separable, so erosion/dilation run as k shifted
AND/OR passes per axis. Pixels outside the image count as background.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def _check_kernel(k: int) -> int:
    k = int(k)
    if k < 1 or k % 2 == 0:
        raise ValueError(f"structuring element size must be odd and positive, got {k}")
    return k


def _shift_or(mask: np.ndarray, axis: int, r: int) -> np.ndarray:
    out = mask.copy()
    for d in range(1, r + 1):
        src = [slice(None)] * mask.ndim
        dst = [slice(None)] * mask.ndim
        src[axis] = slice(d, None)
        dst[axis] = slice(None, -d)
        out[tuple(dst)] |= mask[tuple(src)]
        src[axis] = slice(None, -d)
        dst[axis] = slice(d, None)
        out[tuple(dst)] |= mask[tuple(src)]
    return out


def _shift_and(mask: np.ndarray, axis: int, r: int) -> np.ndarray:
    out = mask.copy()
    for d in range(1, r + 1):
        src = [slice(None)] * mask.ndim
        dst = [slice(None)] * mask.ndim
        src[axis] = slice(d, None)
        dst[axis] = slice(None, -d)
        shifted = np.zeros_like(mask)
        shifted[tuple(dst)] = mask[tuple(src)]
        out &= shifted
        shifted = np.zeros_like(mask)
        src[axis] = slice(None, -d)
        dst[axis] = slice(d, None)
        shifted[tuple(dst)] = mask[tuple(src)]
        out &= shifted
    return out


def dilate(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary dilation by a k x k square."""
    k = _check_kernel(k)
    m = np.asarray(mask, dtype=bool)
    r = k // 2
    if r == 0:
        return m.copy()
    return _shift_or(_shift_or(m, 0, r), 1, r)


def erode(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary erosion by a k x k square (zero padding: borders erode)."""
    k = _check_kernel(k)
    m = np.asarray(mask, dtype=bool)
    r = k // 2
    if r == 0:
        return m.copy()
    return _shift_and(_shift_and(m, 0, r), 1, r)


def opening(mask: np.ndarray, k: int) -> np.ndarray:
    """Erosion followed by dilation; removes features smaller than the element."""
    return dilate(erode(mask, k), k)


def remove_small_components(mask: np.ndarray, min_area: int, connectivity: int = 8) -> np.ndarray:
    """Drop 8-connected components with fewer than *min_area* pixels."""
    m = np.asarray(mask, dtype=bool)
    if min_area <= 1 or not m.any():
        return m.copy()
    structure = np.ones((3, 3), bool) if connectivity == 8 else None
    labels, n = ndimage.label(m, structure=structure)
    if n == 0:
        return m.copy()
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


def refine_mask(mask: np.ndarray, k: int = 13, min_region_area: int = 60) -> np.ndarray:
    """Clean a predicted mask: k x k opening, then drop sub-threshold specks."""
    return remove_small_components(opening(mask, k), min_region_area)
