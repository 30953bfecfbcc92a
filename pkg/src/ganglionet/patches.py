"""Training patch extraction, flip augmentation, and fold assembly."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PATCH_SIDE = 128


@dataclass
class PatchPair:
    """A 128x128 image crop with its binary mask and provenance."""

    image: np.ndarray  # (128, 128, 3) uint8
    mask: np.ndarray  # (128, 128) bool
    image_id: str
    top: int
    left: int


def extract_training_patches(
    image: np.ndarray,
    mask: np.ndarray,
    stride: int = 64,
    image_id: str = "",
    patch_side: int = PATCH_SIDE,
) -> list[PatchPair]:
    """Slide a window at *stride* and keep crops whose mask has any positive pixel.

    Backgrounds dominate these images, so training only on windows that
    contain a cell keeps the classes workably balanced.
    """
    if image.shape[:2] != mask.shape:
        raise ValueError(f"image extents {image.shape[:2]} != mask extents {mask.shape}")
    h, w = mask.shape
    if h < patch_side or w < patch_side:
        raise ValueError(f"image {w}x{h} smaller than patch side {patch_side}")
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    m = np.asarray(mask, dtype=bool)
    pairs = []
    for top in range(0, h - patch_side + 1, stride):
        for left in range(0, w - patch_side + 1, stride):
            window = m[top : top + patch_side, left : left + patch_side]
            if window.any():
                pairs.append(
                    PatchPair(
                        image=np.ascontiguousarray(image[top : top + patch_side, left : left + patch_side]),
                        mask=np.ascontiguousarray(window),
                        image_id=image_id,
                        top=top,
                        left=left,
                    )
                )
    return pairs


def augment_flips(pairs: list[PatchPair]) -> list[PatchPair]:
    """Expand each pair to original, horizontal, vertical, and double flip."""
    out = []
    for p in pairs:
        out.append(p)
        for flip in ("h", "v", "hv"):
            img, msk = p.image, p.mask
            if "h" in flip:
                img, msk = img[:, ::-1], msk[:, ::-1]
            if "v" in flip:
                img, msk = img[::-1], msk[::-1]
            out.append(
                PatchPair(
                    image=np.ascontiguousarray(img),
                    mask=np.ascontiguousarray(msk),
                    image_id=p.image_id,
                    top=p.top,
                    left=p.left,
                )
            )
    return out


def fivefold_split(
    pairs: list[PatchPair], seed: int, n_folds: int = 5
) -> list[tuple[list[PatchPair], list[PatchPair]]]:
    """Partition pairs into train/validation folds grouped by source image.

    No source image straddles a fold boundary; fold sizes differ by at most
    one image. The same seed always produces the same split.
    """
    ids: list[str] = []
    for p in pairs:
        if p.image_id not in ids:
            ids.append(p.image_id)
    if len(ids) < n_folds:
        raise ValueError(f"need at least {n_folds} source images, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    groups = np.array_split(np.arange(len(order)), n_folds)
    folds = []
    for g in groups:
        val_ids = {order[i] for i in g}
        train = [p for p in pairs if p.image_id not in val_ids]
        val = [p for p in pairs if p.image_id in val_ids]
        folds.append((train, val))
    return folds
