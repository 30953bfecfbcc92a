import json

import numpy as np

from ganglionet.imageio import load_image
from ganglionet.metrics import CountAccuracy, DetectionScore, EvalRecord
from ganglionet.regions import CountingCalibration, count_image
from ganglionet.reports import (
    count_report_dict,
    plot_count_comparison,
    plot_dice_history,
    render_overlay,
    save_count_report,
    save_dice_history_csv,
    save_metrics_json,
    write_run_manifest,
)
from ganglionet.training import EpochStats

CAL = CountingCalibration(scan_type="N", dilation_k=13, avg_pixels_per_cell=270.0)


def sample_report():
    mask = np.zeros((60, 80), bool)
    mask[10:28, 10:28] = True  # 324 px -> 1 cell
    mask[35:55, 40:75] = True  # 700 px -> 2 cells
    return count_image(mask, CAL, "img_x")


class TestOverlay:
    def test_contours_drawn_and_counts_rendered(self, tmp_path):
        report = sample_report()
        image = np.full((60, 80, 3), 200, np.uint8)
        path = tmp_path / "overlay.png"
        render_overlay(image, report, path)
        out = load_image(path)
        assert out.shape == image.shape
        # contour pixels recolored with the fixed contour color; the count
        # text may overdraw a few of them
        ys, xs = np.nonzero((out == (255, 220, 0)).all(axis=2))
        drawn = set(zip(xs.tolist(), ys.tolist()))
        contour_set = {(x, y) for r in report.regions for x, y in r.contour}
        assert drawn and drawn <= contour_set
        assert len(drawn) >= 0.7 * len(contour_set)

    def test_deterministic_bytes(self, tmp_path):
        report = sample_report()
        image = np.full((60, 80, 3), 180, np.uint8)
        render_overlay(image, report, tmp_path / "a.png")
        render_overlay(image, report, tmp_path / "b.png")
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestCountReportJson:
    def test_structure(self, tmp_path):
        report = sample_report()
        path = tmp_path / "r.json"
        save_count_report(report, path)
        data = json.loads(path.read_text())
        assert data["image_id"] == "img_x"
        assert data["scan_type"] == "N"
        assert data["total_cells"] == report.total_cells
        assert data["total_ganglia"] == 1
        for r in data["regions"]:
            assert {"label", "area", "cell_count", "is_ganglia", "bbox"} <= set(r)

    def test_dict_round_trip_values(self):
        report = sample_report()
        d = count_report_dict(report)
        assert d["total_regions"] == len(d["regions"]) == 2


class TestHistoryOutputs:
    def history(self):
        return [
            EpochStats(1, 0.6, 0.20, 0.18),
            EpochStats(2, 0.3, 0.55, 0.50),
            EpochStats(3, 0.1, 0.90, 0.85),
        ]

    def test_csv_format(self, tmp_path):
        path = tmp_path / "h.csv"
        save_dice_history_csv(self.history(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_dice,val_dice"
        assert lines[1] == "1,0.200000,0.180000"

    def test_csv_without_validation(self, tmp_path):
        path = tmp_path / "h.csv"
        save_dice_history_csv([EpochStats(1, 0.5, 0.4, None)], path)
        assert path.read_text().splitlines()[1] == "1,0.400000,"

    def test_figure_written_and_deterministic(self, tmp_path):
        plot_dice_history(self.history(), tmp_path / "a.png")
        plot_dice_history(self.history(), tmp_path / "b.png")
        assert (tmp_path / "a.png").stat().st_size > 1000
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


class TestMetricsOutputs:
    def test_metrics_json(self, tmp_path):
        records = [EvalRecord("a", 10, 9), EvalRecord("b", 20, 20)]
        acc = CountAccuracy(
            per_image={"a": 0.9, "b": 1.0},
            mean_per_image=0.95,
            aggregate=1.0 - 1.0 / 30.0,
            total_manual=30,
            total_predicted=29,
        )
        det = DetectionScore(tp=28, fp=1, fn=2)
        path = tmp_path / "m.json"
        save_metrics_json(acc, det, records, path)
        data = json.loads(path.read_text())
        assert data["total_manual"] == 30
        assert data["detection"]["tp"] == 28
        assert 0 < data["detection"]["f1"] < 1

    def test_comparison_figure(self, tmp_path):
        records = [EvalRecord(f"i{k}", 10 + k, 9 + k) for k in range(3)]
        plot_count_comparison(records, tmp_path / "c.png")
        assert (tmp_path / "c.png").stat().st_size > 1000


class TestRunManifest:
    def test_contents_and_stability(self, tmp_path):
        for name in ("m1.json", "m2.json"):
            write_run_manifest(
                tmp_path / name, "train", {"seed": 1}, 1,
                {"in.png": "ab" * 32}, ["out.bin"],
            )
        a = (tmp_path / "m1.json").read_bytes()
        assert a == (tmp_path / "m2.json").read_bytes()
        data = json.loads(a)
        assert data["stage"] == "train"
        assert "versions" in data and "ganglionet" in data["versions"]
