import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rocksr import dataset as ds
from rocksr.errors import DataError
from rocksr.images import GrayImage, load_image, save_image
from rocksr.rng import derive_rng
from rocksr.synthetic import make_toy_corpus, textured_rock_image


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return make_toy_corpus(root, n_images=12, size=48, scale=4, seed=11)


def _dummy_entries(n):
    return [
        ds.ManifestEntry(id=f"e{i}", hr_path=f"hr/{i}.png", lr_path=f"lr/{i}.png",
                         rock_class="sandstone", split="train", kernel="box", scale=4)
        for i in range(n)
    ]


class TestSplits:
    def test_sizes_follow_eight_one_one(self):
        entries = ds.assign_splits(_dummy_entries(100), seed=0)
        counts = {s: sum(e.split == s for e in entries) for s in ds.SPLITS}
        assert counts == {"train": 80, "valid": 10, "test": 10}

    def test_remainder_goes_to_train(self):
        entries = ds.assign_splits(_dummy_entries(57), seed=0)
        counts = {s: sum(e.split == s for e in entries) for s in ds.SPLITS}
        assert counts == {"train": 47, "valid": 5, "test": 5}

    def test_same_seed_same_split(self):
        a = [e.split for e in ds.assign_splits(_dummy_entries(40), seed=5)]
        b = [e.split for e in ds.assign_splits(_dummy_entries(40), seed=5)]
        assert a == b

    def test_different_seed_usually_differs(self):
        a = [e.split for e in ds.assign_splits(_dummy_entries(40), seed=5)]
        b = [e.split for e in ds.assign_splits(_dummy_entries(40), seed=6)]
        assert a != b

    def test_split_is_a_permutation_not_a_copy(self):
        entries = ds.assign_splits(_dummy_entries(30), seed=1)
        assert sorted(e.id for e in entries if e.split == "train") != [
            f"e{i}" for i in range(24)
        ]  # astronomically unlikely to be the identity split

    def test_under_ten_entries_raises(self):
        with pytest.raises(DataError, match="at least 10"):
            ds.assign_splits(_dummy_entries(9), seed=0)

    @given(n=st.integers(10, 300), seed=st.integers(0, 10_000))
    @settings(deadline=None, max_examples=30)
    def test_partition_property(self, n, seed):
        entries = ds.assign_splits(_dummy_entries(n), seed=seed)
        counts = {s: sum(e.split == s for e in entries) for s in ds.SPLITS}
        assert counts["valid"] == counts["test"] == n // 10
        assert counts["train"] == n - 2 * (n // 10)


class TestManifestIO:
    def test_roundtrip(self, tmp_path):
        entries = ds.assign_splits(_dummy_entries(12), seed=3)
        m = ds.DatasetManifest(entries=entries, base_dir=tmp_path)
        ds.save_manifest(m, tmp_path / "m.jsonl")
        back = ds.load_manifest(tmp_path / "m.jsonl")
        assert [vars(e) for e in back.entries] == [vars(e) for e in entries]
        assert back.base_dir == tmp_path

    def test_jsonl_one_object_per_line(self, tmp_path):
        m = ds.DatasetManifest(entries=_dummy_entries(3), base_dir=tmp_path)
        ds.save_manifest(m, tmp_path / "m.jsonl")
        lines = (tmp_path / "m.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            record = json.loads(line)
            assert set(record) == set(ds._MANIFEST_FIELDS)

    def test_missing_field_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "x", "hr_path": "a", "lr_path": "b"}\n')
        with pytest.raises(DataError, match="missing fields"):
            ds.load_manifest(path)

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(DataError, match="invalid JSON"):
            ds.load_manifest(path)

    def test_unknown_split_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        record = dict(id="x", hr_path="a", lr_path="b", rock_class="coal",
                      split="holdout", kernel="box", scale=4)
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(DataError, match="split"):
            ds.load_manifest(path)

    def test_empty_manifest_rejected(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("\n")
        with pytest.raises(DataError, match="empty"):
            ds.load_manifest(path)


class TestRockClass:
    @pytest.mark.parametrize("name,expected", [
        ("sandstone_001.png", "sandstone"),
        ("carbonate_x.pgm", "carbonate"),
        ("coal_deep_07.png", "coal"),
        ("granite_1.png", "unknown"),
        ("sandstone.png", "unknown"),  # no underscore separator
    ])
    def test_prefix_inference(self, name, expected):
        assert ds.rock_class_of(name) == expected


class TestPrepare:
    def test_corpus_layout_and_pairing(self, toy_manifest):
        assert len(toy_manifest.entries) == 12
        scale = toy_manifest.scale
        for entry in toy_manifest.entries:
            hr = load_image(toy_manifest.hr_file(entry))
            lr = load_image(toy_manifest.lr_file(entry))
            assert hr.pixels.shape == (48, 48)
            assert lr.pixels.shape == (12, 12)
            assert entry.kernel in ("box", "triangle", "lanczos2", "lanczos3")
            assert entry.scale == scale == 4

    def test_bicubic_only_mode(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        paths = []
        for i in range(10):
            p = src / f"sandstone_{i}.png"
            save_image(GrayImage(textured_rock_image(16, seed=i)), p)
            paths.append(p)
        manifest, _ = ds.prepare_corpus(paths, tmp_path / "out", scale=4, seed=0,
                                        kernel_mode="bicubic")
        assert all(e.kernel == "bicubic" for e in manifest.entries)

    def test_unknown_kernel_mode_rejected(self, tmp_path):
        with pytest.raises(DataError, match="kernel_mode"):
            ds.prepare_corpus([], tmp_path / "out", scale=4, seed=0,
                              kernel_mode="sharpest")

    def test_rerun_is_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            make_toy_corpus(tmp_path / sub, n_images=10, size=32, scale=4, seed=7)
        a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert a == b

    def test_odd_sizes_are_center_cropped(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        img = GrayImage(textured_rock_image(37, seed=0)[:37, :34])
        save_image(img, src / "coal_0.png")
        paths = [src / "coal_0.png"]
        for i in range(1, 10):
            save_image(GrayImage(textured_rock_image(36, seed=i)), src / f"coal_{i}.png")
            paths.append(src / f"coal_{i}.png")
        manifest, warnings = ds.prepare_corpus(paths, tmp_path / "out", scale=4, seed=0)
        hr = load_image(manifest.hr_file(manifest.entries[0]))
        assert hr.pixels.shape == (36, 32)
        assert any("cropped" in w for w in warnings)

    def test_small_corpus_falls_back_to_train_only(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        paths = []
        for i in range(4):
            p = src / f"sandstone_{i}.png"
            save_image(GrayImage(textured_rock_image(16, seed=i)), p)
            paths.append(p)
        manifest, warnings = ds.prepare_corpus(paths, tmp_path / "out", scale=4, seed=0)
        assert all(e.split == "train" for e in manifest.entries)
        assert any("train" in w for w in warnings)

    def test_unreadable_file_skipped_with_warning(self, tmp_path):
        src = tmp_path / "src"
        src.mkdir()
        bad = src / "sandstone_bad.png"
        bad.write_bytes(b"not a png at all")
        paths = [bad]
        for i in range(10):
            p = src / f"sandstone_{i}.png"
            save_image(GrayImage(textured_rock_image(16, seed=i)), p)
            paths.append(p)
        manifest, warnings = ds.prepare_corpus(paths, tmp_path / "out", scale=2, seed=0)
        assert len(manifest.entries) == 10
        assert any("skipping" in w for w in warnings)

    def test_nothing_usable_raises(self, tmp_path):
        bad = tmp_path / "sandstone_bad.png"
        bad.write_bytes(b"nope")
        with pytest.raises(DataError, match="no usable"):
            ds.prepare_corpus([bad], tmp_path / "out", scale=4, seed=0)


class TestPatchSampling:
    def test_shapes_alignment_and_determinism(self, toy_manifest):
        rng1 = derive_rng(0, "batch", 5)
        batch1 = ds.sample_patch_batch(toy_manifest, "train", 6, 16, rng1)
        assert batch1.lr.shape == (6, 4, 4, 1)
        assert batch1.hr.shape == (6, 16, 16, 1)
        rng2 = derive_rng(0, "batch", 5)
        batch2 = ds.sample_patch_batch(toy_manifest, "train", 6, 16, rng2)
        np.testing.assert_array_equal(batch1.lr, batch2.lr)
        np.testing.assert_array_equal(batch1.hr, batch2.hr)
        assert batch1.entry_ids == batch2.entry_ids
        assert batch1.lr_offsets == batch2.lr_offsets

    def test_patches_register_with_their_entries(self, toy_manifest):
        rng = derive_rng(1, "batch", 0)
        batch = ds.sample_patch_batch(toy_manifest, "train", 4, 16, rng)
        by_id = {e.id: e for e in toy_manifest.entries}
        for slot in range(4):
            entry = by_id[batch.entry_ids[slot]]
            lr = load_image(toy_manifest.lr_file(entry)).pixels
            hr = load_image(toy_manifest.hr_file(entry)).pixels
            oy, ox = batch.lr_offsets[slot]
            np.testing.assert_array_equal(batch.lr[slot, :, :, 0],
                                          lr[oy : oy + 4, ox : ox + 4])
            np.testing.assert_array_equal(batch.hr[slot, :, :, 0],
                                          hr[4 * oy : 4 * oy + 16, 4 * ox : 4 * ox + 16])

    def test_offsets_cover_the_whole_image(self, toy_manifest):
        # LR images are 12x12, crop 4 -> offsets in [0, 8]; with many draws
        # both ends must occur
        rng = derive_rng(2, "batch", 0)
        seen = set()
        for _ in range(40):
            batch = ds.sample_patch_batch(toy_manifest, "train", 8, 16, rng)
            seen.update(o[0] for o in batch.lr_offsets)
            seen.update(o[1] for o in batch.lr_offsets)
        assert 0 in seen and 8 in seen
        assert max(seen) <= 8

    def test_augmentation_changes_lr_only_and_logs_draws(self, toy_manifest):
        spec = ds.AugmentSpec(blur_sigma_max=1.0, noise_variance_max=0.005)
        plain = ds.sample_patch_batch(toy_manifest, "train", 5, 16, derive_rng(3, "b", 0))
        augmented = ds.sample_patch_batch(toy_manifest, "train", 5, 16,
                                          derive_rng(3, "b", 0), augment=spec)
        np.testing.assert_array_equal(plain.hr[0], augmented.hr[0])
        assert augmented.augment_draws is not None and len(augmented.augment_draws) == 5
        for sigma, var in augmented.augment_draws:
            assert 0 <= sigma <= 1.0
            assert 0 <= var <= 0.005

    def test_disabled_augmentation_is_passthrough(self, toy_manifest):
        spec = ds.AugmentSpec(enabled=False)
        a = ds.sample_patch_batch(toy_manifest, "train", 3, 16, derive_rng(4, "b", 0))
        b = ds.sample_patch_batch(toy_manifest, "train", 3, 16, derive_rng(4, "b", 0),
                                  augment=spec)
        np.testing.assert_array_equal(a.lr, b.lr)
        assert b.augment_draws is None

    def test_empty_split_rejected(self, tmp_path):
        manifest = make_toy_corpus(tmp_path, n_images=4, size=16, scale=4, seed=0)
        with pytest.raises(DataError, match="no entries"):
            ds.sample_patch_batch(manifest, "valid", 2, 8, derive_rng(0, "b", 0))

    def test_crop_divisibility_enforced(self, toy_manifest):
        with pytest.raises(DataError, match="divisible"):
            ds.sample_patch_batch(toy_manifest, "train", 2, 17, derive_rng(0, "b", 0))

    def test_oversized_crop_rejected(self, toy_manifest):
        with pytest.raises(DataError, match="smaller than crop"):
            ds.sample_patch_batch(toy_manifest, "train", 2, 96, derive_rng(0, "b", 0))


class TestAugmentSpec:
    def test_noise_variance_is_scaled_to_pixel_domain(self):
        # on a constant patch, measured variance must track 4x the drawn
        # [0,1]-domain variance once blur is disabled
        spec = ds.AugmentSpec(blur_sigma_max=0.0, noise_variance_max=0.005)
        base = np.zeros((200, 200), dtype=np.float32)
        checked = 0
        for trial in range(20):
            out, (sigma, var) = spec.apply(base, np.random.default_rng(trial))
            assert sigma == 0.0
            if var > 1e-3:
                measured = float(out.astype(np.float64).var())
                assert measured == pytest.approx(4 * var, rel=0.15)
                checked += 1
        assert checked >= 3

    def test_rejects_negative_ranges(self):
        with pytest.raises(DataError):
            ds.AugmentSpec(blur_sigma_max=-1).validate()


class TestImageCache:
    def test_hits_and_eviction(self, toy_manifest):
        cache = ds.ImageCache(capacity=2)
        e = toy_manifest.entries[:3]
        cache.get(toy_manifest.hr_file(e[0]))
        cache.get(toy_manifest.hr_file(e[0]))
        assert cache.hits == 1 and cache.misses == 1
        cache.get(toy_manifest.hr_file(e[1]))
        cache.get(toy_manifest.hr_file(e[2]))  # evicts e[0]
        cache.get(toy_manifest.hr_file(e[0]))
        assert cache.misses == 4

    def test_same_content_identity(self, toy_manifest):
        cache = ds.ImageCache()
        p = toy_manifest.hr_file(toy_manifest.entries[0])
        assert cache.get(p) is cache.get(p)


def test_center_crop_to_multiple():
    x = np.arange(35).reshape(5, 7).astype(np.float32)
    out = ds.center_crop_to_multiple(x, 4)
    np.testing.assert_array_equal(out, x[0:4, 1:5])
    with pytest.raises(DataError, match="too small"):
        ds.center_crop_to_multiple(np.zeros((3, 8), dtype=np.float32), 4)
