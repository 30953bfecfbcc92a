"""Command line pipeline: synth / make-masks / extract-patches / train /
infer / count / eval / calibrate.

Each stage reads the shared key=value config, writes its artifacts plus a
run manifest under the output directory, and exits 0 on success or with a
stage-specific code and a one-line machine-parsable error otherwise.

Heavy imports happen inside main() so GANGLIONET_THREADS can cap the BLAS
worker count before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_CHECKPOINT = 4
EXIT_DATA = 5
EXIT_INTERNAL = 1


class CliError(Exception):
    def __init__(self, code: str, exit_code: int, message: str):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code


def _missing(what: str) -> CliError:
    return CliError("MISSING_INPUT", EXIT_MISSING_INPUT, what)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ganglionet",
        description="Detect and count ganglion cells in high-power-field images.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, help_text in (
        ("synth", "generate a synthetic dataset with exact ground truth"),
        ("make-masks", "turn point annotations into training masks"),
        ("extract-patches", "cut cell-bearing training patches from images and masks"),
        ("train", "train the segmentation network on extracted patches"),
        ("infer", "run tiled whole-image inference with a checkpoint"),
        ("count", "refine predicted masks and count cells per region"),
        ("eval", "score predicted counts against manual annotations"),
        ("calibrate", "measure average single-cell region area on training images"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="pipeline config file (key=value)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--scan-type", choices=("H", "N"), help="override the scan type")
        p.add_argument("--kernel", type=int, choices=(5, 7, 9, 11, 13),
                       help="override the dilation kernel size")
        p.add_argument("--checkpoint", type=Path, help="checkpoint path override")
        p.add_argument("--out", type=Path, help="output directory override")
        p.add_argument("--data", type=Path, help="data directory override")
    return parser


def _load_config(args):
    from .config import PipelineConfig, load_config

    if args.config is not None:
        if not args.config.exists():
            raise _missing(f"config file not found: {args.config}")
        try:
            config = load_config(args.config)
        except ValueError as exc:
            raise CliError("CONFIG", EXIT_CONFIG, str(exc)) from exc
    else:
        config = PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    if args.scan_type is not None:
        config.scan_type = args.scan_type
    if args.kernel is not None:
        config.dilation_k = args.kernel
    if args.out is not None:
        config.out_dir = str(args.out)
    if args.data is not None:
        config.data_dir = str(args.data)
    if args.checkpoint is not None:
        config.checkpoint = str(args.checkpoint)
    try:
        config.validate()
    except ValueError as exc:
        raise CliError("CONFIG", EXIT_CONFIG, str(exc)) from exc
    return config


def _arch(config):
    from .network import NablaArchitecture

    enc = tuple(config.encoder_widths)
    return NablaArchitecture(
        encoder_widths=enc,
        decoder_widths=tuple(reversed(enc[:-1])),
        n_decode_levels=config.n_decode_levels,
        t_steps=config.t_steps,
        patch_side=config.patch_side,
    )


def _train_dir(config) -> Path:
    base = Path(config.data_dir)
    return base / "train" if (base / "train").is_dir() else base


def _test_dir(config) -> Path:
    base = Path(config.data_dir)
    return base / "test" if (base / "test").is_dir() else base


def _hash_paths(paths) -> dict[str, str]:
    from .imageio import sha256_file

    return {str(p): sha256_file(p) for p in sorted(paths)}


def _manifest(config, stage: str, inputs, outputs) -> None:
    from .config import config_dict
    from .reports import write_run_manifest

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_run_manifest(
        out / f"{stage}.manifest.json",
        stage,
        config_dict(config),
        config.seed,
        _hash_paths(inputs),
        [str(p) for p in outputs],
    )


def _load_checkpoint(config):
    from .checkpoint import CheckpointError, load_checkpoint

    path = Path(config.checkpoint or (Path(config.out_dir) / "checkpoint.gnet"))
    if not path.exists():
        raise _missing(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path), path
    except CheckpointError as exc:
        raise CliError("CHECKPOINT_MISMATCH", EXIT_CHECKPOINT, str(exc)) from exc


def cmd_synth(config) -> int:
    from .synthetic import SynthSpec, generate_suite

    template = SynthSpec(
        width=config.synth_width,
        height=config.synth_height,
        scan_type=config.scan_type,
        cell_count_range=(config.synth_cells_min, config.synth_cells_max),
        cell_radius_mean=config.synth_cell_radius,
        cell_radius_std=config.synth_cell_radius_std,
        cluster_probability=config.synth_cluster_prob,
        cluster_size_range=(config.synth_cluster_min, config.synth_cluster_max),
        seed=config.seed,
    )
    train_ids, test_ids = generate_suite(
        config.synth_train, config.synth_test, template, config.seed, config.data_dir
    )
    print(f"[synth] wrote {len(train_ids)} training and {len(test_ids)} test images "
          f"to {config.data_dir}")
    outputs = [p for p in Path(config.data_dir).rglob("*") if p.is_file()]
    _manifest(config, "synth", [], outputs)
    return 0


def cmd_make_masks(config) -> int:
    from .imageio import list_samples, load_sample, save_mask
    from .masks import MaskSpec, PointAnnotationSet, mask_from_points

    src = _train_dir(config)
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    spec = MaskSpec(sigma=config.sigma, dilation_k=config.dilation_k, threshold=config.threshold)
    mask_dir = Path(config.out_dir) / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    inputs, outputs = [], []
    for image_id in ids:
        image, points, meta = load_sample(src, image_id)
        annotations = PointAnnotationSet(points, image_id, meta.get("scan_type", "H"))
        h, w = image.shape[:2]
        try:
            mask = mask_from_points(annotations, (w, h), spec)
        except ValueError as exc:
            raise CliError("DATA", EXIT_DATA, f"{image_id}: {exc}") from exc
        out_path = mask_dir / f"{image_id}.mask.png"
        save_mask(out_path, mask)
        inputs += [src / f"{image_id}.png", src / f"{image_id}.points.csv"]
        outputs.append(out_path)
        print(f"[make-masks] {image_id}: {int(mask.sum())} positive pixels")
    _manifest(config, "make-masks", inputs, outputs)
    return 0


def cmd_extract_patches(config) -> int:
    from .imageio import list_samples, load_image, load_mask, save_image, save_mask
    from .patches import extract_training_patches

    src = _train_dir(config)
    mask_dir = Path(config.out_dir) / "masks"
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    patch_dir = Path(config.out_dir) / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    index_lines = ["file,image_id,top,left"]
    inputs, outputs = [], []
    total = 0
    for image_id in ids:
        mask_path = mask_dir / f"{image_id}.mask.png"
        if not mask_path.exists():
            raise _missing(f"mask not found: {mask_path} (run make-masks first)")
        image = load_image(src / f"{image_id}.png")
        mask = load_mask(mask_path)
        try:
            pairs = extract_training_patches(
                image, mask, stride=config.patch_stride, image_id=image_id,
                patch_side=config.patch_side,
            )
        except ValueError as exc:
            raise CliError("DATA", EXIT_DATA, f"{image_id}: {exc}") from exc
        for p in pairs:
            base = f"{image_id}_y{p.top}_x{p.left}"
            save_image(patch_dir / f"{base}.png", p.image)
            save_mask(patch_dir / f"{base}.mask.png", p.mask)
            index_lines.append(f"{base},{image_id},{p.top},{p.left}")
            outputs += [patch_dir / f"{base}.png", patch_dir / f"{base}.mask.png"]
        total += len(pairs)
        inputs += [src / f"{image_id}.png", mask_path]
        print(f"[extract-patches] {image_id}: {len(pairs)} patches")
    index_path = patch_dir / "index.csv"
    index_path.write_text("\n".join(index_lines) + "\n", encoding="utf-8")
    outputs.append(index_path)
    print(f"[extract-patches] total {total} patches")
    _manifest(config, "extract-patches", inputs, outputs)
    return 0


def _load_patch_pairs(config):
    from .imageio import load_image, load_mask
    from .patches import PatchPair

    patch_dir = Path(config.out_dir) / "patches"
    index_path = patch_dir / "index.csv"
    if not index_path.exists():
        raise _missing(f"patch index not found: {index_path} (run extract-patches first)")
    pairs = []
    for line in index_path.read_text(encoding="utf-8").splitlines()[1:]:
        if not line.strip():
            continue
        base, image_id, top, left = line.split(",")
        pairs.append(
            PatchPair(
                image=load_image(patch_dir / f"{base}.png"),
                mask=load_mask(patch_dir / f"{base}.mask.png"),
                image_id=image_id,
                top=int(top),
                left=int(left),
            )
        )
    if not pairs:
        raise CliError("DATA", EXIT_DATA, f"patch index {index_path} lists no patches")
    return pairs, index_path


def cmd_train(config) -> int:
    from .checkpoint import save_checkpoint
    from .patches import augment_flips, fivefold_split
    from .reports import plot_dice_history, save_dice_history_csv
    from .training import TrainConfig, train

    pairs, index_path = _load_patch_pairs(config)
    if config.fold >= 0:
        try:
            folds = fivefold_split(pairs, config.seed)
        except ValueError as exc:
            raise CliError("DATA", EXIT_DATA, str(exc)) from exc
        if config.fold >= len(folds):
            raise CliError("CONFIG", EXIT_CONFIG, f"fold {config.fold} out of range")
        train_pairs, val_pairs = folds[config.fold]
    else:
        train_pairs, val_pairs = pairs, None
    if config.augment:
        train_pairs = augment_flips(train_pairs)
    arch = _arch(config)
    train_config = TrainConfig(
        epochs=config.epochs,
        batch_size=config.batch_size,
        learning_rate=config.learning_rate,
        seed=config.seed,
        dilation_k=config.dilation_k,
        early_stop_dice=config.early_stop_dice or None,
    )
    n_val = len(val_pairs) if val_pairs else 0
    print(f"[train] {len(train_pairs)} training patches, {n_val} validation patches")
    t0 = time.perf_counter()

    def log_fn(stats):
        val = "-" if stats.val_dice is None else f"{stats.val_dice:.4f}"
        print(f"[train] epoch {stats.epoch}: loss={stats.loss:.5f} "
              f"dice={stats.train_dice:.4f} val={val}", flush=True)

    try:
        result = train(train_pairs, train_config, val_pairs=val_pairs, arch=arch, log_fn=log_fn)
    except (ValueError, RuntimeError) as exc:
        raise CliError("DATA", EXIT_DATA, str(exc)) from exc
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(config.checkpoint) if config.checkpoint else out / "checkpoint.gnet"
    save_checkpoint(result.store, arch, ckpt_path, seed=config.seed)
    save_dice_history_csv(result.history, out / "dice_history.csv")
    plot_dice_history(result.history, out / "dice_curve.png")
    print(f"[train] {result.steps} steps in {time.perf_counter() - t0:.1f}s; "
          f"checkpoint at {ckpt_path}")
    _manifest(config, "train", [index_path], [ckpt_path, out / "dice_history.csv",
                                              out / "dice_curve.png"])
    return 0


def cmd_infer(config) -> int:
    from .imageio import list_samples, load_sample, save_mask, save_probability_png
    from .network import check_store_matches
    from .tiling import infer_image, threshold_map

    (store, arch), ckpt_path = _load_checkpoint(config)
    try:
        check_store_matches(store, arch)
    except ValueError as exc:
        raise CliError("CHECKPOINT_MISMATCH", EXIT_CHECKPOINT, str(exc)) from exc
    src = _test_dir(config)
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    infer_dir = Path(config.out_dir) / "infer"
    infer_dir.mkdir(parents=True, exist_ok=True)
    inputs, outputs = [ckpt_path], []
    for image_id in ids:
        image, _, _ = load_sample(src, image_id)
        t0 = time.perf_counter()
        prob = infer_image(image, store, arch, batch_size=config.tile_batch)
        dt = time.perf_counter() - t0
        save_probability_png(infer_dir / f"{image_id}.prob.png", prob)
        save_mask(infer_dir / f"{image_id}.pred.png", threshold_map(prob, config.threshold))
        inputs.append(src / f"{image_id}.png")
        outputs += [infer_dir / f"{image_id}.prob.png", infer_dir / f"{image_id}.pred.png"]
        print(f"[infer] {image_id}: {image.shape[1]}x{image.shape[0]} in {dt:.2f}s")
    _manifest(config, "infer", inputs, outputs)
    return 0


def _calibration_for(config, scan_type: str):
    from .regions import CountingCalibration

    if config.avg_pixels_per_cell > 0:
        return CountingCalibration(
            scan_type=scan_type,
            dilation_k=config.dilation_k,
            avg_pixels_per_cell=config.avg_pixels_per_cell,
            threshold_single=config.count_threshold_single,
            threshold_double=config.count_threshold_double,
        )
    calib_path = Path(config.out_dir) / "calibration.json"
    if not calib_path.exists():
        raise _missing(
            f"calibration not found: {calib_path} (run calibrate, or set avg_pixels_per_cell)"
        )
    data = json.loads(calib_path.read_text(encoding="utf-8"))
    if scan_type not in data:
        raise CliError("DATA", EXIT_DATA, f"calibration file has no entry for scan type {scan_type}")
    entry = data[scan_type]
    return CountingCalibration(
        scan_type=scan_type,
        dilation_k=int(entry["dilation_k"]),
        avg_pixels_per_cell=float(entry["avg_pixels_per_cell"]),
        threshold_single=config.count_threshold_single,
        threshold_double=config.count_threshold_double,
    )


def cmd_count(config) -> int:
    from .imageio import list_samples, load_mask, load_sample
    from .morphology import refine_mask
    from .regions import count_image
    from .reports import render_overlay, save_count_report

    src = _test_dir(config)
    infer_dir = Path(config.out_dir) / "infer"
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    count_dir = Path(config.out_dir) / "counts"
    count_dir.mkdir(parents=True, exist_ok=True)
    inputs, outputs = [], []
    for image_id in ids:
        pred_path = infer_dir / f"{image_id}.pred.png"
        if not pred_path.exists():
            raise _missing(f"prediction not found: {pred_path} (run infer first)")
        image, _, meta = load_sample(src, image_id)
        scan_type = meta.get("scan_type", config.scan_type)
        calib = _calibration_for(config, scan_type)
        t0 = time.perf_counter()
        refined = refine_mask(load_mask(pred_path), k=calib.dilation_k,
                              min_region_area=config.min_region_area)
        report = count_image(refined, calib, image_id)
        dt = time.perf_counter() - t0
        save_count_report(report, count_dir / f"{image_id}.count.json")
        render_overlay(image, report, count_dir / f"{image_id}.overlay.png")
        inputs += [pred_path, src / f"{image_id}.png"]
        outputs += [count_dir / f"{image_id}.count.json", count_dir / f"{image_id}.overlay.png"]
        print(f"[count] {image_id}: {report.total_cells} cells in {report.total_regions} regions "
              f"({report.total_ganglia} ganglia) in {dt:.2f}s")
    _manifest(config, "count", inputs, outputs)
    return 0


def cmd_calibrate(config) -> int:
    from .imageio import list_samples, load_sample
    from .regions import calibrate_cell_area

    (store, arch), ckpt_path = _load_checkpoint(config)
    src = _train_dir(config)
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    by_type: dict[str, tuple[list, list]] = {}
    inputs = [ckpt_path]
    for image_id in ids:
        image, points, meta = load_sample(src, image_id)
        scan = meta.get("scan_type", config.scan_type)
        by_type.setdefault(scan, ([], []))
        by_type[scan][0].append(image)
        by_type[scan][1].append(points)
        inputs += [src / f"{image_id}.png", src / f"{image_id}.points.csv"]
    payload = {}
    for scan, (images, point_sets) in sorted(by_type.items()):
        try:
            calib = calibrate_cell_area(
                store, arch, images, point_sets, scan,
                dilation_k=config.dilation_k,
                min_region_area=config.min_region_area,
                batch_size=config.tile_batch,
            )
        except ValueError as exc:
            raise CliError("DATA", EXIT_DATA, f"scan type {scan}: {exc}") from exc
        payload[scan] = {
            "dilation_k": calib.dilation_k,
            "avg_pixels_per_cell": round(calib.avg_pixels_per_cell, 3),
        }
        print(f"[calibrate] {scan}: avg {calib.avg_pixels_per_cell:.1f} px/cell")
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    calib_path = out / "calibration.json"
    calib_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    _manifest(config, "calibrate", inputs, [calib_path])
    return 0


def cmd_eval(config) -> int:
    from .imageio import list_samples, load_points_csv
    from .metrics import DetectionScore, EvalRecord, count_accuracy, detection_f1
    from .regions import CountReport, RegionReport
    from .reports import plot_count_comparison, save_metrics_json

    src = _test_dir(config)
    count_dir = Path(config.out_dir) / "counts"
    ids = list_samples(src)
    if not ids:
        raise _missing(f"no samples (*.meta) found under {src}")
    records = []
    tp = fp = fn = 0
    inputs = []
    for image_id in ids:
        report_path = count_dir / f"{image_id}.count.json"
        if not report_path.exists():
            raise _missing(f"count report not found: {report_path} (run count first)")
        data = json.loads(report_path.read_text(encoding="utf-8"))
        report = CountReport(image_id=image_id, scan_type=data["scan_type"])
        for r in data["regions"]:
            report.regions.append(
                RegionReport(
                    label=r["label"], area=r["area"], bbox=tuple(r["bbox"]),
                    centroid=tuple(r["centroid"]), contour=[],
                    cell_count=r["cell_count"], is_ganglia=r["is_ganglia"],
                )
            )
        points = load_points_csv(src / f"{image_id}.points.csv")
        det = detection_f1(report, points, match_radius=config.match_radius)
        tp, fp, fn = tp + det.tp, fp + det.fp, fn + det.fn
        records.append(
            EvalRecord(
                image_id=image_id,
                manual_count=len(points),
                predicted_count=data["total_cells"],
                detection=det,
            )
        )
        inputs += [report_path, src / f"{image_id}.points.csv"]
    try:
        accuracy = count_accuracy(records)
    except ValueError as exc:
        raise CliError("DATA", EXIT_DATA, str(exc)) from exc
    detection = DetectionScore(tp=tp, fp=fp, fn=fn)
    eval_dir = Path(config.out_dir) / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    save_metrics_json(accuracy, detection, records, eval_dir / "metrics.json")
    csv_lines = ["image_id,manual,predicted,accuracy"]
    for rec in records:
        acc = accuracy.per_image.get(rec.image_id, float("nan"))
        csv_lines.append(f"{rec.image_id},{rec.manual_count},{rec.predicted_count},{acc:.6f}")
    (eval_dir / "per_image.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    plot_count_comparison(records, eval_dir / "count_comparison.png")
    print(f"[eval] aggregate accuracy {accuracy.aggregate:.4f}, "
          f"mean per-image {accuracy.mean_per_image:.4f}, detection F1 {detection.f1:.4f}")
    _manifest(config, "eval", inputs,
              [eval_dir / "metrics.json", eval_dir / "per_image.csv",
               eval_dir / "count_comparison.png"])
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "make-masks": cmd_make_masks,
    "extract-patches": cmd_extract_patches,
    "train": cmd_train,
    "infer": cmd_infer,
    "count": cmd_count,
    "eval": cmd_eval,
    "calibrate": cmd_calibrate,
}


def main(argv=None) -> int:
    threads = os.environ.get("GANGLIONET_THREADS")
    if threads and "numpy" not in sys.modules:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    args = build_parser().parse_args(argv)
    try:
        config = _load_config(args)
        return _COMMANDS[args.stage](config)
    except CliError as exc:
        print(f"error: code={exc.code} message={str(exc)!r}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # pragma: no cover - safety net
        print(f"error: code=INTERNAL message={str(exc)!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
