import math

import numpy as np
import pytest

from ganglionet.imageio import list_samples, load_manifest, load_sample
from ganglionet.synthetic import PlacementError, SynthSpec, generate_hpf, generate_suite

SMALL = SynthSpec(
    width=512,
    height=384,
    cell_count_range=(12, 20),
    cell_radius_mean=9.0,
    cluster_probability=0.2,
    seed=5,
)


class TestGenerateHpf:
    def test_zero_cells_gives_background_only(self):
        spec = SynthSpec(width=256, height=192, cell_count_range=(0, 0), seed=1)
        image, annotations = generate_hpf(spec)
        assert image.shape == (192, 256, 3)
        assert len(annotations) == 0

    def test_same_seed_bit_identical(self):
        a_img, a_ann = generate_hpf(SMALL)
        b_img, b_ann = generate_hpf(SMALL)
        assert np.array_equal(a_img, b_img)
        assert a_ann.points == b_ann.points

    def test_requested_count_is_exact(self):
        spec = SynthSpec(width=1280, height=960, cell_count_range=(104, 104), seed=7)
        _, annotations = generate_hpf(spec)
        assert len(annotations.points) == 104
        assert len(set(annotations.points)) == 104

    def test_annotations_inside_image(self):
        image, annotations = generate_hpf(SMALL)
        h, w = image.shape[:2]
        for x, y in annotations.points:
            assert 0 <= x < w and 0 <= y < h

    def test_cells_are_visibly_darker_than_background(self):
        image, annotations = generate_hpf(SMALL)
        bg_estimate = np.median(image.reshape(-1, 3), axis=0)
        for x, y in annotations.points:
            assert image[y, x].astype(int).sum() < bg_estimate.astype(int).sum() - 100

    def test_cluster_probability_one_produces_touching_pair(self):
        spec = SynthSpec(
            width=640, height=480, cell_count_range=(10, 10),
            cluster_probability=1.0, cluster_size_range=(2, 2), seed=3,
        )
        _, annotations = generate_hpf(spec)
        pts = annotations.points
        touch_bound = 2.0 * (spec.cell_radius_mean + 2 * spec.cell_radius_std)
        dists = [
            math.dist(pts[i], pts[j])
            for i in range(len(pts))
            for j in range(i + 1, len(pts))
        ]
        assert min(dists) <= touch_bound

    def test_impossible_layout_rejected_with_achieved_count(self):
        spec = SynthSpec(width=128, height=128, cell_count_range=(300, 300), seed=0)
        with pytest.raises(PlacementError) as err:
            generate_hpf(spec)
        assert err.value.requested == 300
        assert 0 <= err.value.achieved < 300
        assert str(err.value.achieved) in str(err.value)

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SynthSpec(scan_type="Z")
        with pytest.raises(ValueError):
            SynthSpec(cell_count_range=(5, 3))
        with pytest.raises(ValueError):
            SynthSpec(cluster_probability=1.5)
        with pytest.raises(ValueError):
            SynthSpec(cluster_size_range=(1, 2))


class TestGenerateSuite:
    def suite_template(self):
        return SynthSpec(width=384, height=256, cell_count_range=(5, 9),
                         cell_radius_mean=8.0, cluster_probability=0.0)

    def test_writes_expected_file_counts(self, tmp_path):
        train_ids, test_ids = generate_suite(10, 2, self.suite_template(), seed=4,
                                             out_dir=tmp_path)
        assert len(train_ids) == 10 and len(test_ids) == 2
        assert len(list((tmp_path / "train").glob("*.png"))) == 10
        assert len(list((tmp_path / "test").glob("*.png"))) == 2
        assert len(list(tmp_path.rglob("*.png"))) == 12

    def test_manifests_reference_existing_files(self, tmp_path):
        generate_suite(5, 1, self.suite_template(), seed=2, out_dir=tmp_path)
        for split in ("train", "test"):
            for image_id in list_samples(tmp_path / split):
                meta = load_manifest(tmp_path / split / f"{image_id}.meta")
                assert meta["image_id"] == image_id
                assert (tmp_path / split / f"{image_id}.png").exists()
                assert (tmp_path / split / f"{image_id}.points.csv").exists()
                assert meta["scan_type"] in ("H", "N")

    def test_train_test_ids_disjoint(self, tmp_path):
        train_ids, test_ids = generate_suite(6, 3, self.suite_template(), seed=0,
                                             out_dir=tmp_path)
        assert set(train_ids).isdisjoint(test_ids)

    def test_regeneration_is_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_suite(5, 1, self.suite_template(), seed=11, out_dir=a_dir)
        generate_suite(5, 1, self.suite_template(), seed=11, out_dir=b_dir)
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        assert a_files == b_files
        for rel in a_files:
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_too_few_training_images_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            generate_suite(4, 1, self.suite_template(), seed=0, out_dir=tmp_path)

    def test_samples_load_back(self, tmp_path):
        generate_suite(5, 0, self.suite_template(), seed=9, out_dir=tmp_path)
        ids = list_samples(tmp_path / "train")
        image, points, meta = load_sample(tmp_path / "train", ids[0])
        assert image.shape == (256, 384, 3)
        assert len(points) >= 5
        assert meta["width"] == "384"
