"""Connected-component labeling, contours, and area-based cell counting."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .morphology import refine_mask


@dataclass
class CountingCalibration:
    """Scan-type specific conversion from region area to cell count.

    For H-type scans, regions above threshold_single / threshold_double
    pixels have one / two counts subtracted to compensate for unstained
    tissue enclosed by the region; N-type regions use the plain quotient.
    """

    scan_type: str
    dilation_k: int
    avg_pixels_per_cell: float
    threshold_single: float = 900.0
    threshold_double: float = 1250.0

    def __post_init__(self):
        if self.scan_type not in ("H", "N"):
            raise ValueError(f"scan_type must be 'H' or 'N', got {self.scan_type!r}")
        if self.avg_pixels_per_cell <= 0:
            raise ValueError("avg_pixels_per_cell must be positive")
        if not self.threshold_single < self.threshold_double:
            raise ValueError("threshold_single must be below threshold_double")


@dataclass
class RegionReport:
    label: int
    area: int
    bbox: tuple[int, int, int, int]  # (min_x, min_y, max_x, max_y), inclusive
    centroid: tuple[float, float]  # (x, y)
    contour: list[tuple[int, int]]  # ordered boundary pixels, (x, y)
    cell_count: int
    is_ganglia: bool


@dataclass
class CountReport:
    image_id: str
    scan_type: str
    regions: list[RegionReport] = field(default_factory=list)

    @property
    def total_cells(self) -> int:
        return sum(r.cell_count for r in self.regions)

    @property
    def total_regions(self) -> int:
        return len(self.regions)

    @property
    def total_ganglia(self) -> int:
        return sum(1 for r in self.regions if r.is_ganglia)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> tuple[np.ndarray, int]:
    """Label foreground regions 1..n in raster order of their first pixel."""
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    m = np.asarray(mask, dtype=bool)
    structure = np.ones((3, 3), bool) if connectivity == 8 else None
    labels, n = ndimage.label(m, structure=structure)
    if n == 0:
        return labels.astype(np.int32), 0
    # scipy assigns labels in scan order already; relabel explicitly so the
    # raster-order contract never depends on library internals.
    flat = labels.ravel()
    first = np.full(n + 1, flat.size, dtype=np.int64)
    nz = np.flatnonzero(flat)
    np.minimum.at(first, flat[nz], nz)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[1 + order] = np.arange(1, n + 1, dtype=np.int32)
    return remap[labels], n


# clockwise ring around a pixel, starting west: W NW N NE E SE S SW
_TRACE_DIRS = [(0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1)]
_DIR_INDEX = {d: i for i, d in enumerate(_TRACE_DIRS)}


def trace_contour(region: np.ndarray) -> list[tuple[int, int]]:
    """Moore-neighbour boundary trace of a single connected region.

    *region* is a boolean array holding one 8-connected component. Returns
    the clockwise ordered boundary pixels as (x, y), starting from the first
    foreground pixel in raster order. Stops when the start pixel is
    re-entered from its original backtrack (Jacob's criterion).
    """
    ys, xs = np.nonzero(region)
    if ys.size == 0:
        return []
    h, w = region.shape
    sy, sx = int(ys[0]), int(xs[0])
    if ys.size == 1:
        return [(sx, sy)]

    def fg(y: int, x: int) -> bool:
        return 0 <= y < h and 0 <= x < w and bool(region[y, x])

    contour = [(sx, sy)]
    cy, cx = sy, sx
    back = 0  # backtrack direction: the west neighbour is background by raster order
    for _ in range(8 * ys.size + 16):
        found = -1
        for step in range(1, 9):
            d = (back + step) % 8
            dy, dx = _TRACE_DIRS[d]
            if fg(cy + dy, cx + dx):
                found = d
                prev = (back + step - 1) % 8  # last background neighbour scanned
                break
        if found < 0:
            break
        ny, nx = cy + _TRACE_DIRS[found][0], cx + _TRACE_DIRS[found][1]
        pby, pbx = cy + _TRACE_DIRS[prev][0], cx + _TRACE_DIRS[prev][1]
        back = _DIR_INDEX[(pby - ny, pbx - nx)]
        cy, cx = ny, nx
        if (cy, cx) == (sy, sx) and back == 0:
            break
        contour.append((cx, cy))
    return contour


def count_region(area: int, calib: CountingCalibration) -> int:
    """Cells attributed to one region of *area* pixels; always at least 1."""
    raw = int(area // calib.avg_pixels_per_cell)
    if calib.scan_type == "H":
        if area > calib.threshold_double:
            raw -= 2
        elif area > calib.threshold_single:
            raw -= 1
    return max(1, raw)


def count_image(mask: np.ndarray, calib: CountingCalibration, image_id: str) -> CountReport:
    """Label a refined mask and apply the area counting rules per region."""
    labels, n = connected_components(mask, connectivity=8)
    report = CountReport(image_id=image_id, scan_type=calib.scan_type)
    if n == 0:
        return report
    areas = np.bincount(labels.ravel(), minlength=n + 1)
    slices = ndimage.find_objects(labels)
    centroids = ndimage.center_of_mass(np.ones_like(labels), labels, index=range(1, n + 1))
    for lab in range(1, n + 1):
        area = int(areas[lab])
        sl = slices[lab - 1]
        local = labels[sl] == lab
        contour = [(x + sl[1].start, y + sl[0].start) for x, y in trace_contour(local)]
        cells = count_region(area, calib)
        cy, cx = centroids[lab - 1]
        report.regions.append(
            RegionReport(
                label=lab,
                area=area,
                bbox=(sl[1].start, sl[0].start, sl[1].stop - 1, sl[0].stop - 1),
                centroid=(float(cx), float(cy)),
                contour=contour,
                cell_count=cells,
                is_ganglia=cells >= 2,
            )
        )
    return report


def single_cell_average(
    masks: list[np.ndarray], point_sets: list[list[tuple[int, int]]]
) -> tuple[float, int]:
    """Mean area of regions containing exactly one annotated point.

    Returns (average area, number of single-cell regions measured).
    """
    total = 0.0
    count = 0
    for mask, points in zip(masks, point_sets):
        labels, n = connected_components(mask)
        if n == 0:
            continue
        hits = np.zeros(n + 1, dtype=np.int64)
        h, w = labels.shape
        for x, y in points:
            if 0 <= y < h and 0 <= x < w:
                hits[labels[y, x]] += 1
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        for lab in range(1, n + 1):
            if hits[lab] == 1:
                total += float(areas[lab])
                count += 1
    avg = total / count if count else 0.0
    return avg, count


def calibrate_cell_area(
    store,
    arch,
    images: list[np.ndarray],
    point_sets: list[list[tuple[int, int]]],
    scan_type: str,
    dilation_k: int = 13,
    min_region_area: int = 60,
    min_single_regions: int = 10,
    batch_size: int = 16,
) -> CountingCalibration:
    """Measure the average single-cell region area on training images.

    Runs inference, thresholds at 0.5, refines, then averages the areas of
    components that contain exactly one annotation point. Rejected when
    fewer than *min_single_regions* such components exist.
    """
    from .tiling import infer_image, threshold_map

    masks = []
    for image in images:
        prob = infer_image(image, store, arch, batch_size=batch_size)
        masks.append(refine_mask(threshold_map(prob), k=dilation_k, min_region_area=min_region_area))
    avg, n = single_cell_average(masks, point_sets)
    if n < min_single_regions:
        raise ValueError(
            f"calibration unreliable: found only {n} single-cell regions, need {min_single_regions}"
        )
    return CountingCalibration(scan_type=scan_type, dilation_k=dilation_k, avg_pixels_per_cell=avg)
