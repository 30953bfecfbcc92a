"""Flat key=value pipeline configuration.

One commented plain-text file drives every CLI stage; parse -> serialize ->
parse round-trips to an equal config.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path


@dataclass
class PipelineConfig:
    # paths
    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""
    # shared
    seed: int = 0
    scan_type: str = "H"
    # mask construction
    sigma: float = 6.0
    dilation_k: int = 13
    threshold: float = 0.5
    # patch extraction
    patch_stride: int = 64
    augment: bool = True
    # training
    epochs: int = 500
    batch_size: int = 32
    learning_rate: float = 3e-4
    early_stop_dice: float = 0.0  # 0 disables early stopping
    fold: int = 0  # -1 trains on everything with no validation fold
    # architecture
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    n_decode_levels: int = 3
    t_steps: int = 2
    patch_side: int = 128
    # inference
    tile_batch: int = 16
    # counting
    min_region_area: int = 60
    avg_pixels_per_cell: float = 0.0  # 0 means: read from calibration file
    count_threshold_single: float = 900.0
    count_threshold_double: float = 1250.0
    # evaluation
    match_radius: float = 20.0
    # synthetic data
    synth_width: int = 2560
    synth_height: int = 1920
    synth_cells_min: int = 40
    synth_cells_max: int = 110
    synth_cell_radius: float = 9.5
    synth_cell_radius_std: float = 1.0
    synth_cluster_prob: float = 0.12
    synth_cluster_min: int = 2
    synth_cluster_max: int = 3
    synth_train: int = 10
    synth_test: int = 2

    def validate(self) -> None:
        if self.scan_type not in ("H", "N"):
            raise ValueError(f"scan_type must be H or N, got {self.scan_type!r}")
        if self.dilation_k not in (5, 7, 9, 11, 13):
            raise ValueError(f"dilation_k must be one of 5,7,9,11,13, got {self.dilation_k}")
        if self.epochs < 1 or self.batch_size < 1 or self.tile_batch < 1:
            raise ValueError("epochs, batch_size and tile_batch must be positive")
        if self.learning_rate <= 0 or self.sigma <= 0:
            raise ValueError("learning_rate and sigma must be positive")
        if self.patch_stride < 1:
            raise ValueError("patch_stride must be positive")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")


def _parse_value(name: str, kind, raw: str):
    raw = raw.strip()
    if kind is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config key {name}: expected boolean, got {raw!r}")
    if kind is int:
        return int(raw)
    if kind is float:
        return float(raw)
    if kind is str:
        return raw
    # tuple of ints, comma separated
    return tuple(int(v) for v in raw.split(",") if v.strip() != "")


def parse_config(text: str) -> PipelineConfig:
    """Parse key=value lines; '#' starts a comment; unknown keys are rejected."""
    kinds = {f.name: type(getattr(PipelineConfig(), f.name)) for f in fields(PipelineConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, kinds[key], raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    config = PipelineConfig(**values)
    config.validate()
    return config


def load_config(path: str | os.PathLike) -> PipelineConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def serialize_config(config: PipelineConfig) -> str:
    lines = []
    for f in fields(PipelineConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def config_dict(config: PipelineConfig) -> dict:
    """JSON-friendly snapshot for run manifests."""
    out = {}
    for f in fields(PipelineConfig):
        value = getattr(config, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out
