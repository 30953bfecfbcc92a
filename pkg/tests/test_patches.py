import numpy as np
import pytest

from ganglionet.patches import PatchPair, augment_flips, extract_training_patches, fivefold_split


def solid_pair(image_id="img", value=7):
    img = np.full((128, 128, 3), value, np.uint8)
    img[0, 0, 0] = 1  # break flip symmetry
    mask = np.zeros((128, 128), bool)
    mask[10:20, 30:40] = True
    return PatchPair(image=img, mask=mask, image_id=image_id, top=0, left=0)


class TestExtraction:
    def test_all_zero_mask_gives_empty_list(self):
        img = np.zeros((256, 256, 3), np.uint8)
        assert extract_training_patches(img, np.zeros((256, 256), bool), 64) == []

    def test_matches_brute_force_window_scan(self):
        rng = np.random.default_rng(5)
        img = rng.integers(0, 255, (256, 256, 3), dtype=np.uint8)
        mask = np.zeros((256, 256), bool)
        mask[118:135, 120:140] = True  # one centred cell
        stride = 128
        pairs = extract_training_patches(img, mask, stride, image_id="x")
        expected = []
        for top in range(0, 256 - 128 + 1, stride):
            for left in range(0, 256 - 128 + 1, stride):
                if mask[top : top + 128, left : left + 128].any():
                    expected.append((top, left))
        assert [(p.top, p.left) for p in pairs] == expected
        assert len(pairs) == 4  # the component straddles all four windows

    def test_every_patch_has_positive_pixel(self):
        rng = np.random.default_rng(8)
        img = rng.integers(0, 255, (300, 400, 3), dtype=np.uint8)
        mask = rng.random((300, 400)) > 0.999
        for p in extract_training_patches(img, mask, 64):
            assert p.mask.any()
            assert p.image.shape == (128, 128, 3)

    def test_too_small_image_rejected(self):
        with pytest.raises(ValueError):
            extract_training_patches(np.zeros((100, 128, 3), np.uint8),
                                     np.zeros((100, 128), bool), 64)

    def test_extent_mismatch_rejected(self):
        with pytest.raises(ValueError):
            extract_training_patches(np.zeros((128, 128, 3), np.uint8),
                                     np.zeros((128, 130), bool), 64)

    def test_reproducible_order(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 255, (256, 256, 3), dtype=np.uint8)
        mask = rng.random((256, 256)) > 0.995
        a = extract_training_patches(img, mask, 32)
        b = extract_training_patches(img, mask, 32)
        assert [(p.top, p.left) for p in a] == [(p.top, p.left) for p in b]


class TestAugmentation:
    def test_quadruples_count(self):
        pairs = [solid_pair(f"img{i}") for i in range(514)]
        assert len(augment_flips(pairs)) == 2056

    def test_double_horizontal_flip_is_identity(self):
        p = solid_pair()
        h1 = augment_flips([p])[1]
        h2 = augment_flips([h1])[1]
        assert np.array_equal(h2.image, p.image)
        assert np.array_equal(h2.mask, p.mask)

    def test_flip_preserves_positive_count(self):
        p = solid_pair()
        for q in augment_flips([p]):
            assert q.mask.sum() == p.mask.sum()

    def test_image_and_mask_flip_together(self):
        img = np.zeros((128, 128, 3), np.uint8)
        img[5, 100] = 200
        mask = np.zeros((128, 128), bool)
        mask[5, 100] = True
        out = augment_flips([PatchPair(img, mask, "a", 0, 0)])
        for q in out:
            ys, xs = np.nonzero(q.mask)
            assert q.image[ys[0], xs[0], 0] == 200

    def test_no_two_outputs_identical_for_asymmetric_source(self):
        outs = augment_flips([solid_pair()])
        blobs = [q.image.tobytes() + q.mask.tobytes() for q in outs]
        assert len(set(blobs)) == 4


class TestFivefold:
    def make_pairs(self, n_images, per_image=3):
        pairs = []
        for i in range(n_images):
            for _ in range(per_image):
                pairs.append(solid_pair(f"img{i:02d}"))
        return pairs

    def test_ten_images_two_per_fold(self):
        folds = fivefold_split(self.make_pairs(10), seed=4)
        assert len(folds) == 5
        for train, val in folds:
            val_ids = {p.image_id for p in val}
            assert len(val_ids) == 2
            assert val_ids.isdisjoint({p.image_id for p in train})

    def test_val_sets_partition_all_images(self):
        pairs = self.make_pairs(11)
        folds = fivefold_split(pairs, seed=0)
        all_ids = {p.image_id for p in pairs}
        seen = []
        for _, val in folds:
            seen.extend(sorted({p.image_id for p in val}))
        assert sorted(seen) == sorted(all_ids)  # disjoint + covering

    def test_same_seed_identical_split(self):
        pairs = self.make_pairs(7)
        a = fivefold_split(pairs, seed=3)
        b = fivefold_split(pairs, seed=3)
        for (ta, va), (tb, vb) in zip(a, b):
            assert [id(p) for p in ta] == [id(p) for p in tb]
            assert [id(p) for p in va] == [id(p) for p in vb]

    def test_too_few_images_rejected(self):
        with pytest.raises(ValueError):
            fivefold_split(self.make_pairs(4), seed=0)

    def test_fold_sizes_differ_by_at_most_one_image(self):
        folds = fivefold_split(self.make_pairs(13), seed=2)
        sizes = [len({p.image_id for p in val}) for _, val in folds]
        assert max(sizes) - min(sizes) <= 1
