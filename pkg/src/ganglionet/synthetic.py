"""Synthetic stained-tissue images with exact point ground truth.

Renders brown elliptical nuclei over an H-type (blue-gray, counterstained)
or N-type (pale neutral) background. Realism stops where the counting
pipeline's needs stop: size, contiguity and contrast are controlled, true
centers are exact, and everything is reproducible from the seed.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .imageio import save_image, save_manifest, save_points_csv
from .masks import PointAnnotationSet


class PlacementError(RuntimeError):
    """Cell layout could not satisfy the overlap bounds."""

    def __init__(self, requested: int, achieved: int):
        super().__init__(
            f"could not place {requested} cells within overlap bounds; achieved {achieved}"
        )
        self.requested = requested
        self.achieved = achieved


@dataclass(frozen=True)
class SynthSpec:
    width: int = 2560
    height: int = 1920
    scan_type: str = "H"
    cell_count_range: tuple[int, int] = (40, 110)
    cell_radius_mean: float = 9.5
    cell_radius_std: float = 1.0
    cluster_probability: float = 0.12
    cluster_size_range: tuple[int, int] = (2, 3)
    stain_jitter: float = 0.10
    min_center_distance: float = 36.0
    seed: int = 0

    def __post_init__(self):
        if self.scan_type not in ("H", "N"):
            raise ValueError(f"scan_type must be 'H' or 'N', got {self.scan_type!r}")
        if self.cell_radius_mean <= 0 or self.cell_radius_std < 0:
            raise ValueError("cell radius distribution must be positive")
        lo, hi = self.cell_count_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad cell count range {self.cell_count_range}")
        if not 0.0 <= self.cluster_probability <= 1.0:
            raise ValueError("cluster_probability must lie in [0, 1]")
        clo, chi = self.cluster_size_range
        if clo < 2 or chi < clo:
            raise ValueError(f"bad cluster size range {self.cluster_size_range}")
        if self.width < 32 or self.height < 32:
            raise ValueError("extents too small")


# max allowed center overlap inside a cluster: 60% of the summed radii
_MIN_CLUSTER_GAP = 0.4
_MAX_CLUSTER_GAP = 0.95


def _background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    if spec.scan_type == "H":
        base = np.array([214.0, 211.0, 226.0])
    else:
        base = np.array([236.0, 233.0, 227.0])
    img = np.empty((h, w, 3), dtype=np.float32)
    img[:] = base
    # coarse stain texture, then per-pixel grain
    cell = 64
    coarse = rng.normal(0.0, 4.0, (h // cell + 1, w // cell + 1, 3))
    img += np.kron(coarse, np.ones((cell, cell, 1)))[:h, :w]
    img += rng.normal(0.0, 2.0, (h, w, 1))
    return img


def _draw_ellipse(
    img: np.ndarray,
    cx: float,
    cy: float,
    a: float,
    b: float,
    theta: float,
    color: np.ndarray,
) -> None:
    h, w = img.shape[:2]
    half = int(math.ceil(max(a, b))) + 2
    x0, x1 = max(0, int(cx) - half), min(w, int(cx) + half + 1)
    y0, y1 = max(0, int(cy) - half), min(h, int(cy) + half + 1)
    if x0 >= x1 or y0 >= y1:
        return
    ys = np.arange(y0, y1, dtype=np.float32) - cy
    xs = np.arange(x0, x1, dtype=np.float32) - cx
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    ct, st = math.cos(theta), math.sin(theta)
    u = (xx * ct + yy * st) / a
    v = (-xx * st + yy * ct) / b
    d = np.sqrt(u * u + v * v)
    r_px = 0.5 * (a + b)
    alpha = np.clip((1.0 - d) * r_px + 0.5, 0.0, 1.0)[..., None]
    shade = (0.88 + 0.12 * np.clip(d, 0.0, 1.0))[..., None]
    img[y0:y1, x0:x1] = img[y0:y1, x0:x1] * (1.0 - alpha) + color * shade * alpha


def _counterstain(img: np.ndarray, spec: SynthSpec, rng: np.random.Generator) -> None:
    # pale unlabeled nuclei; densities loosely follow tissue appearance
    n = int(spec.width * spec.height / 26000)
    for _ in range(n):
        cx = rng.uniform(0, spec.width)
        cy = rng.uniform(0, spec.height)
        r = rng.uniform(3.5, 8.0)
        ecc = rng.uniform(1.0, 1.4)
        color = np.array([172.0, 166.0, 206.0]) + rng.normal(0.0, 6.0, 3)
        _draw_ellipse(img, cx, cy, r * math.sqrt(ecc), r / math.sqrt(ecc), rng.uniform(0, math.pi), color)


def _layout_cells(spec: SynthSpec, rng: np.random.Generator, n_target: int):
    """Sample centers and radii satisfying the separation/overlap bounds."""
    cells: list[tuple[float, float, float]] = []  # (cx, cy, r)
    margin = spec.cell_radius_mean * 2.5 + 4.0
    attempts = 0
    max_attempts = 400 * max(1, n_target)

    def radius() -> float:
        return max(2.5, rng.normal(spec.cell_radius_mean, spec.cell_radius_std))

    def far_enough(cx, cy, r, exempt_from: int) -> bool:
        for i, (ox, oy, orad) in enumerate(cells):
            d = math.hypot(cx - ox, cy - oy)
            limit = _MIN_CLUSTER_GAP * (r + orad) if i >= exempt_from else spec.min_center_distance
            if d < limit:
                return False
        return True

    while len(cells) < n_target:
        if attempts > max_attempts:
            raise PlacementError(n_target, len(cells))
        attempts += 1
        remaining = n_target - len(cells)
        size = 1
        if remaining >= 2 and rng.random() < spec.cluster_probability:
            clo, chi = spec.cluster_size_range
            size = min(remaining, int(rng.integers(clo, chi + 1)))
        r0 = radius()
        cx = rng.uniform(margin, spec.width - margin)
        cy = rng.uniform(margin, spec.height - margin)
        if not far_enough(cx, cy, r0, exempt_from=len(cells)):
            continue
        group = [(cx, cy, r0)]
        ok = True
        for _ in range(size - 1):
            placed = False
            for _ in range(40):
                attempts += 1
                rk = radius()
                anchor = group[int(rng.integers(0, len(group)))]
                gap = rng.uniform(_MIN_CLUSTER_GAP + 0.15, _MAX_CLUSTER_GAP)
                d = gap * (anchor[2] + rk)
                ang = rng.uniform(0.0, 2.0 * math.pi)
                nx, ny = anchor[0] + d * math.cos(ang), anchor[1] + d * math.sin(ang)
                if not (margin <= nx <= spec.width - margin and margin <= ny <= spec.height - margin):
                    continue
                base = len(cells)
                trial = cells + group
                # members must keep isolation from all cells outside the group
                good = True
                for i, (ox, oy, orad) in enumerate(trial):
                    dd = math.hypot(nx - ox, ny - oy)
                    limit = (
                        _MIN_CLUSTER_GAP * (rk + orad)
                        if i >= base
                        else spec.min_center_distance
                    )
                    if dd < limit:
                        good = False
                        break
                if good:
                    group.append((nx, ny, rk))
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if ok:
            cells.extend(group)
    return cells


def generate_hpf(spec: SynthSpec) -> tuple[np.ndarray, PointAnnotationSet]:
    """Render one image and its exact center annotations, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    img = _background(spec, rng)
    if spec.scan_type == "H":
        _counterstain(img, spec, rng)
    lo, hi = spec.cell_count_range
    n_target = int(rng.integers(lo, hi + 1))
    cells = _layout_cells(spec, rng, n_target)

    base_color = np.array([128.0, 82.0, 50.0])
    points: list[tuple[int, int]] = []
    for cx, cy, r in cells:
        ecc = rng.uniform(1.0, 1.45)
        theta = rng.uniform(0.0, math.pi)
        tint = 1.0 + spec.stain_jitter * rng.uniform(-1.0, 1.0)
        color = np.clip(base_color * tint + rng.normal(0.0, 4.0, 3), 0, 255)
        _draw_ellipse(img, cx, cy, r * math.sqrt(ecc), r / math.sqrt(ecc), theta, color)
        points.append((int(round(cx)), int(round(cy))))

    image = np.clip(np.round(img), 0, 255).astype(np.uint8)
    annotations = PointAnnotationSet(points=points, image_id="", scan_type=spec.scan_type)
    annotations.check_bounds((spec.width, spec.height))
    return image, annotations


def generate_suite(
    n_train: int,
    n_test: int,
    template: SynthSpec,
    seed: int,
    out_dir: str | os.PathLike,
) -> tuple[list[str], list[str]]:
    """Write a train/test dataset to disk: PNG + points CSV + manifest per image.

    Scan types alternate between H and N (N cells rendered slightly smaller),
    image seeds derive from *seed*, and each manifest is written only after
    its image and points exist, so a failed run never leaves a dangling
    manifest. Returns the (train_ids, test_ids).
    """
    if n_train < 5:
        raise ValueError(f"need at least 5 training images for fold grouping, got {n_train}")
    if n_test < 0:
        raise ValueError("n_test must be non-negative")
    out = Path(out_dir)
    ids: dict[str, list[str]] = {"train": [], "test": []}
    for split_no, (split, count) in enumerate((("train", n_train), ("test", n_test))):
        split_dir = out / split
        split_dir.mkdir(parents=True, exist_ok=True)
        for i in range(count):
            scan = "H" if i % 2 == 0 else "N"
            image_id = f"{scan}_{split}_{i:02d}"
            child_seed = int(np.random.SeedSequence(entropy=seed, spawn_key=(split_no, i)).generate_state(1)[0])
            spec = replace(
                template,
                scan_type=scan,
                seed=child_seed,
                cell_radius_mean=template.cell_radius_mean * (1.0 if scan == "H" else 0.88),
            )
            image, annotations = generate_hpf(spec)
            save_image(split_dir / f"{image_id}.png", image)
            save_points_csv(split_dir / f"{image_id}.points.csv", annotations.points)
            manifest = {
                "image_id": image_id,
                "scan_type": scan,
                "magnification": "200" if scan == "H" else "100",
                "width": str(spec.width),
                "height": str(spec.height),
                "seed": str(child_seed),
            }
            tmp = split_dir / f"{image_id}.meta.tmp"
            save_manifest(tmp, manifest)
            os.replace(tmp, split_dir / f"{image_id}.meta")
            ids[split].append(image_id)
    return ids["train"], ids["test"]
