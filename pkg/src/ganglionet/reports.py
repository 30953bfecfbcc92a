"""Report rendering: count overlays, metric files, and training figures."""

from __future__ import annotations

import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from PIL import Image, ImageDraw

from .metrics import CountAccuracy, DetectionScore, EvalRecord
from .regions import CountReport
from .training import EpochStats

CONTOUR_COLOR = (255, 220, 0)
TEXT_COLOR = (220, 30, 30)


def render_overlay(image: np.ndarray, report: CountReport, path: str | os.PathLike) -> None:
    """Input image with region contours and per-region counts at the centroids."""
    img = Image.fromarray(np.asarray(image, dtype=np.uint8), mode="RGB")
    draw = ImageDraw.Draw(img)
    for region in report.regions:
        if region.contour:
            draw.point(region.contour, fill=CONTOUR_COLOR)
        cx, cy = region.centroid
        draw.text((cx + 3, cy - 6), str(region.cell_count), fill=TEXT_COLOR)
    draw.text(
        (6, 6),
        f"{report.image_id} cells={report.total_cells} ganglia={report.total_ganglia}",
        fill=TEXT_COLOR,
    )
    img.save(path, format="PNG")


def count_report_dict(report: CountReport) -> dict:
    return {
        "image_id": report.image_id,
        "scan_type": report.scan_type,
        "regions": [
            {
                "label": r.label,
                "area": r.area,
                "bbox": list(r.bbox),
                "centroid": [round(r.centroid[0], 2), round(r.centroid[1], 2)],
                "cell_count": r.cell_count,
                "is_ganglia": r.is_ganglia,
            }
            for r in report.regions
        ],
        "total_cells": report.total_cells,
        "total_regions": report.total_regions,
        "total_ganglia": report.total_ganglia,
    }


def save_count_report(report: CountReport, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(count_report_dict(report), indent=2) + "\n", encoding="utf-8")


def save_dice_history_csv(history: list[EpochStats], path: str | os.PathLike) -> None:
    """Flat CSV (epoch, train_dice, val_dice) for external curve plotting."""
    lines = ["epoch,train_dice,val_dice"]
    for s in history:
        val = "" if s.val_dice is None else f"{s.val_dice:.6f}"
        lines.append(f"{s.epoch},{s.train_dice:.6f},{val}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def plot_dice_history(history: list[EpochStats], path: str | os.PathLike) -> None:
    """Training/validation dice curves rendered to a PNG."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0), dpi=120)
    epochs = [s.epoch for s in history]
    ax.plot(epochs, [s.train_dice for s in history], color="tab:orange", label="training dice")
    if any(s.val_dice is not None for s in history):
        ax.plot(
            epochs,
            [s.val_dice if s.val_dice is not None else float("nan") for s in history],
            color="tab:blue",
            label="validation dice",
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("dice coefficient")
    ax.set_ylim(0.0, 1.0)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_count_comparison(records: list[EvalRecord], path: str | os.PathLike) -> None:
    """Manual vs predicted counts per image as a grouped bar chart."""
    fig, ax = plt.subplots(figsize=(7.2, 4.0), dpi=120)
    xs = np.arange(len(records))
    ax.bar(xs - 0.2, [r.manual_count for r in records], width=0.4, label="manual")
    ax.bar(xs + 0.2, [r.predicted_count for r in records], width=0.4, label="predicted")
    ax.set_xticks(xs)
    ax.set_xticklabels([r.image_id for r in records], rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("cells")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def save_metrics_json(
    accuracy: CountAccuracy,
    detection: DetectionScore,
    records: list[EvalRecord],
    path: str | os.PathLike,
) -> None:
    """Counting accuracies (all three constructions) plus detection scores."""
    payload = {
        "per_image_accuracy": {k: round(v, 6) for k, v in accuracy.per_image.items()},
        "mean_per_image_accuracy": round(accuracy.mean_per_image, 6),
        "aggregate_accuracy": round(accuracy.aggregate, 6),
        "total_manual": accuracy.total_manual,
        "total_predicted": accuracy.total_predicted,
        "detection": {
            "tp": detection.tp,
            "fp": detection.fp,
            "fn": detection.fn,
            "precision": round(detection.precision, 6),
            "recall": round(detection.recall, 6),
            "f1": round(detection.f1, 6),
        },
        "images": [
            {
                "image_id": r.image_id,
                "manual": r.manual_count,
                "predicted": r.predicted_count,
            }
            for r in records
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def write_run_manifest(
    path: str | os.PathLike,
    stage: str,
    config_snapshot: dict,
    seed: int,
    inputs: dict[str, str],
    outputs: list[str],
) -> None:
    """Traceability record for one pipeline stage (no wall-clock fields, so
    reruns with identical inputs are byte-identical)."""
    import ganglionet

    payload = {
        "stage": stage,
        "seed": seed,
        "versions": {
            "ganglionet": ganglionet.__version__,
            "numpy": np.__version__,
        },
        "config": config_snapshot,
        "input_hashes": inputs,
        "outputs": sorted(outputs),
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
