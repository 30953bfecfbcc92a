"""Whole-image inference by non-overlapping tiling.

Images are conceptually zero-padded on the right/bottom to multiples of the
patch side, split into a disjoint covering grid, run through the network in
batches, and merged back; the padded margin is discarded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import NablaArchitecture, check_store_matches, network_forward
from .params import ParamStore


@dataclass(frozen=True)
class Tile:
    row: int
    col: int
    top: int
    left: int


@dataclass(frozen=True)
class TilePlan:
    width: int
    height: int
    patch_side: int
    tiles: tuple[Tile, ...]
    pad_right: int
    pad_bottom: int

    @property
    def padded_width(self) -> int:
        return self.width + self.pad_right

    @property
    def padded_height(self) -> int:
        return self.height + self.pad_bottom


def plan_tiles(width: int, height: int, patch_side: int = 128) -> TilePlan:
    """Disjoint tile grid exactly covering the padded image."""
    if width < 1 or height < 1:
        raise ValueError(f"extents must be positive, got {width}x{height}")
    cols = -(-width // patch_side)
    rows = -(-height // patch_side)
    tiles = tuple(
        Tile(row=r, col=c, top=r * patch_side, left=c * patch_side)
        for r in range(rows)
        for c in range(cols)
    )
    return TilePlan(
        width=width,
        height=height,
        patch_side=patch_side,
        tiles=tiles,
        pad_right=cols * patch_side - width,
        pad_bottom=rows * patch_side - height,
    )


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Map 8-bit pixels to [0, 1] float32 -- the network's only input scaling.

    Used identically for training patches and inference tiles.
    """
    return np.asarray(image, dtype=np.float32) / 255.0


def split_into_tiles(array: np.ndarray, plan: TilePlan) -> list[np.ndarray]:
    """Cut a (H, W, ...) array into the plan's tiles, zero-padding the margin."""
    if array.shape[0] != plan.height or array.shape[1] != plan.width:
        raise ValueError(f"array extents {array.shape[:2]} do not match plan "
                         f"{plan.height}x{plan.width}")
    pad = [(0, plan.pad_bottom), (0, plan.pad_right)] + [(0, 0)] * (array.ndim - 2)
    padded = np.pad(array, pad)
    s = plan.patch_side
    return [padded[t.top : t.top + s, t.left : t.left + s] for t in plan.tiles]


def merge_tile_maps(tile_maps: list[np.ndarray], plan: TilePlan) -> np.ndarray:
    """Place per-tile maps back at their offsets and crop the padding."""
    if len(tile_maps) != len(plan.tiles):
        raise ValueError(f"expected {len(plan.tiles)} tiles, got {len(tile_maps)}")
    s = plan.patch_side
    trailing = tile_maps[0].shape[2:]
    out = np.zeros((plan.padded_height, plan.padded_width, *trailing), dtype=tile_maps[0].dtype)
    for tile, tmap in zip(plan.tiles, tile_maps):
        out[tile.top : tile.top + s, tile.left : tile.left + s] = tmap
    return out[: plan.height, : plan.width]


def infer_image(
    image: np.ndarray,
    store: ParamStore,
    arch: NablaArchitecture,
    batch_size: int = 16,
) -> np.ndarray:
    """Full-image probability map from an 8-bit RGB image.

    Output extents equal the input's; values lie in (0, 1). The result does
    not depend on batch_size beyond float round-off (<= 1e-5).
    """
    if image.ndim != 3 or image.shape[2] != arch.input_channels:
        raise ValueError(f"expected (H, W, {arch.input_channels}) image, got {image.shape}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    check_store_matches(store, arch)
    h, w = image.shape[:2]
    plan = plan_tiles(w, h, arch.patch_side)
    tiles = split_into_tiles(normalize_image(image), plan)
    outputs: list[np.ndarray] = []
    for start in range(0, len(tiles), batch_size):
        batch = np.stack(tiles[start : start + batch_size])
        prob = network_forward(store, arch, batch)
        outputs.extend(prob[i, :, :, 0] for i in range(prob.shape[0]))
    return merge_tile_maps(outputs, plan)


def threshold_map(prob: np.ndarray, tau: float = 0.5) -> np.ndarray:
    """Binary mask via strict comparison: mask = prob > tau."""
    return np.asarray(prob) > tau
