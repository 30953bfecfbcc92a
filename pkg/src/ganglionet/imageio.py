"""File formats: PNG images and masks, point CSVs, key=value manifests."""

from __future__ import annotations

import hashlib
import os
from pathlib import Path

import numpy as np
from PIL import Image


def save_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an 8-bit RGB image as PNG."""
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 3) uint8 image, got {arr.shape} {arr.dtype}")
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")


def load_image(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    """Write a binary mask as 8-bit grayscale PNG with values {0, 255}."""
    arr = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PNG")


def load_mask(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return arr >= 128


def save_probability_png(path: str | os.PathLike, prob: np.ndarray) -> None:
    """Write a probability map as 16-bit grayscale PNG (value = round(p * 65535))."""
    p = np.asarray(prob, dtype=np.float64)
    if p.min() < 0.0 or p.max() > 1.0:
        raise ValueError("probability values must lie in [0, 1]")
    arr = np.round(p * 65535.0).astype(np.uint16)
    Image.fromarray(arr).save(path, format="PNG")  # uint16 maps to mode I;16


def load_probability_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=np.uint16)
    return arr.astype(np.float32) / 65535.0


def save_points_csv(path: str | os.PathLike, points: list[tuple[int, int]]) -> None:
    """One 'x,y' integer pair per line, UTF-8, LF endings."""
    text = "".join(f"{int(x)},{int(y)}\n" for x, y in points)
    Path(path).write_bytes(text.encode("utf-8"))


def load_points_csv(path: str | os.PathLike) -> list[tuple[int, int]]:
    points = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            xs, ys = line.split(",")
            points.append((int(xs), int(ys)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: malformed point line {line!r}") from exc
    return points


def save_manifest(path: str | os.PathLike, entries: dict[str, str]) -> None:
    """Plain-text key=value companion manifest."""
    lines = [f"{k}={v}" for k, v in entries.items()]
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("utf-8"))


def load_manifest(path: str | os.PathLike) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def list_samples(directory: str | os.PathLike) -> list[str]:
    """Image ids in a dataset directory, identified by their .meta manifests."""
    return sorted(p.stem for p in Path(directory).glob("*.meta"))


def load_sample(
    directory: str | os.PathLike, image_id: str
) -> tuple[np.ndarray, list[tuple[int, int]], dict[str, str]]:
    """Load one dataset sample: (RGB image, annotation points, manifest)."""
    d = Path(directory)
    meta = load_manifest(d / f"{image_id}.meta")
    image = load_image(d / f"{image_id}.png")
    points_path = d / f"{image_id}.points.csv"
    points = load_points_csv(points_path) if points_path.exists() else []
    return image, points, meta
