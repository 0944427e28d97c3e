"""Tests for the synthetic scene, noise, and texture generators plus I/O."""

import dataclasses
import json
import math

import numpy as np
import numpy.testing as npt
import pytest

from softguard.data import (
    DATASET_KINDS,
    DatasetError,
    GenerationError,
    SceneSpec,
    all_background_mask,
    gen_noise,
    gen_scene,
    gen_texture,
    load_dataset,
    manifest_hash,
    payload_hash,
    save_dataset,
    texture_params,
)


class TestSceneSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            SceneSpec(num_classes=1)
        with pytest.raises(ValueError):
            SceneSpec(num_classes=6)
        with pytest.raises(ValueError):
            SceneSpec(height=8)
        with pytest.raises(ValueError):
            SceneSpec(min_shapes=3, max_shapes=2)
        with pytest.raises(ValueError):
            SceneSpec(bg_fraction=0.0)
        with pytest.raises(ValueError):
            SceneSpec(bg_fraction=1.0)
        with pytest.raises(ValueError):
            SceneSpec(seed=-1)
        with pytest.raises(ValueError):
            SceneSpec(color_jitter=-0.1)

    def test_spec_hash_tracks_content(self):
        base = SceneSpec()
        assert base.spec_hash == SceneSpec().spec_hash
        for field in ("height", "width", "max_shapes", "seed"):
            changed = dataclasses.replace(base, **{field: getattr(base, field) + 1})
            assert changed.spec_hash != base.spec_hash
        assert dataclasses.replace(base, num_classes=4).spec_hash != base.spec_hash
        assert (
            dataclasses.replace(base, bg_fraction=0.7).spec_hash != base.spec_hash
        )


class TestGenScene:
    def test_deterministic_per_index(self):
        spec = SceneSpec(seed=5)
        img1, mask1 = gen_scene(spec, 3)
        img2, mask2 = gen_scene(spec, 3)
        npt.assert_array_equal(img1, img2)
        npt.assert_array_equal(mask1, mask2)

    def test_indices_differ(self):
        spec = SceneSpec(seed=5)
        img1, _ = gen_scene(spec, 0)
        img2, _ = gen_scene(spec, 1)
        assert not np.array_equal(img1, img2)

    def test_shapes_and_ranges(self):
        spec = SceneSpec(num_classes=4, height=32, width=40, seed=2)
        img, mask = gen_scene(spec, 0)
        assert img.shape == (3, 32, 40)
        assert mask.shape == (32, 40)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert set(np.unique(mask)) <= {0, 1, 2, 3}

    def test_zero_shapes_is_all_background(self):
        spec = SceneSpec(min_shapes=0, max_shapes=0, seed=1)
        img, mask = gen_scene(spec, 0)
        npt.assert_array_equal(mask, np.zeros_like(mask))
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_mean_background_fraction(self):
        spec = SceneSpec(seed=0)
        fractions = [
            float((gen_scene(spec, i)[1] == 0).mean()) for i in range(200)
        ]
        mean = float(np.mean(fractions))
        assert 0.68 <= mean <= 0.78

    def test_every_shape_class_appears_somewhere(self):
        spec = SceneSpec(seed=0)
        seen = set()
        for i in range(40):
            seen |= set(np.unique(gen_scene(spec, i)[1]).tolist())
        assert seen == {0, 1, 2, 3, 4}

    def test_impossible_arrangement_raises(self):
        spec = SceneSpec(
            height=16, width=16, bg_fraction=0.01, min_shapes=4, max_shapes=4, seed=0
        )
        with pytest.raises(GenerationError, match="attempts"):
            gen_scene(spec, 0)


class TestGenNoise:
    def test_deterministic_and_distinct(self):
        npt.assert_array_equal(gen_noise(0, 4, 16, 16), gen_noise(0, 4, 16, 16))
        assert not np.array_equal(gen_noise(0, 4, 16, 16), gen_noise(0, 5, 16, 16))
        assert not np.array_equal(gen_noise(0, 4, 16, 16), gen_noise(1, 4, 16, 16))

    def test_statistics_and_clipping(self):
        img = gen_noise(0, 0, 64, 64)
        assert img.shape == (3, 64, 64)
        assert 0.45 <= float(img.mean()) <= 0.55
        assert img.min() == 0.0 and img.max() == 1.0

    def test_size_validation(self):
        with pytest.raises(ValueError):
            gen_noise(0, 0, 0, 16)


class TestGenTexture:
    def test_deterministic_and_in_range(self):
        a = gen_texture(0, 7, 32, 32)
        npt.assert_array_equal(a, gen_texture(0, 7, 32, 32))
        assert a.shape == (3, 32, 32)
        assert a.min() >= 0.0 and a.max() <= 1.0
        assert not np.array_equal(a, gen_texture(0, 8, 32, 32))

    def test_all_families_appear(self):
        families = {texture_params(0, i, 16, 16)["family"] for i in range(41)}
        assert families == {"grating", "checker", "value_noise", "rings"}

    def test_params_match_generation(self):
        # texture_params replays the exact random draws of gen_texture.
        p1 = texture_params(3, 5, 24, 24)
        p2 = texture_params(3, 5, 24, 24)
        assert p1 == p2

    def test_checker_period_is_two_cells(self):
        for idx in range(41):
            params = texture_params(0, idx, 48, 48)
            if params["family"] != "checker":
                continue
            img = gen_texture(0, idx, 48, 48)
            step = 2 * params["cell"]
            if step < 48:
                npt.assert_array_equal(img[:, :, :-step], img[:, :, step:])
                npt.assert_array_equal(img[:, :-step, :], img[:, step:, :])

    def test_grating_autocorrelation_peak_matches_period(self):
        # For each grating at this seed, the luminance profile projected
        # onto the grating normal repeats at the drawn period within 1 px
        # (smallest lag within 10% of the top correlation, so harmonics
        # at 2x the period do not win).
        size = 64
        checked = 0
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        for idx in range(41):
            params = texture_params(0, idx, size, size)
            if params["family"] != "grating":
                continue
            lum = gen_texture(0, idx, size, size).mean(axis=0)
            lum -= lum.mean()
            s = xx * math.cos(params["angle"]) + yy * math.sin(params["angle"])
            bins = np.round(s - s.min()).astype(int)
            profile = np.bincount(bins.ravel(), weights=lum.ravel()) / np.maximum(
                np.bincount(bins.ravel()), 1
            )
            profile -= profile.mean()
            corrs = {}
            for lag in range(2, 23):
                a, b = profile[:-lag], profile[lag:]
                if a.size < 20:
                    break
                corrs[lag] = float(
                    np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b) + 1e-12)
                )
            top = max(corrs.values())
            estimate = min(lag for lag, r in corrs.items() if r >= 0.9 * top)
            assert abs(estimate - params["period"]) <= 1.0
            checked += 1
        assert checked >= 3

    def test_size_validation(self):
        with pytest.raises(ValueError):
            gen_texture(0, 0, 4, 16)
        with pytest.raises(ValueError):
            texture_params(0, 0, 16, 4)


class TestAllBackgroundMask:
    def test_zeros(self):
        mask = all_background_mask(5, 7)
        assert mask.shape == (5, 7)
        assert mask.dtype == np.int64
        assert not mask.any()


class TestSaveLoad:
    def _scene_items(self, n=3, size=24, seed=9):
        spec = SceneSpec(height=size, width=size, seed=seed)
        return [gen_scene(spec, i) for i in range(n)], spec

    def test_round_trip_quantized_exactly(self, tmp_path):
        items, spec = self._scene_items()
        manifest = save_dataset(
            tmp_path / "train",
            items,
            dataset_id="train",
            kind="in-distribution",
            seed=9,
            spec_payload=dataclasses.asdict(spec),
        )
        images, masks, loaded_manifest = load_dataset(tmp_path / "train")
        assert images.shape == (3, 3, 24, 24)
        assert masks.shape == (3, 24, 24)
        assert loaded_manifest == manifest
        for i, (orig_img, orig_mask) in enumerate(items):
            expected = np.floor(orig_img * 255.0 + 0.5) / 255.0
            npt.assert_array_equal(images[i], expected)
            npt.assert_array_equal(masks[i], orig_mask)

    def test_resave_is_byte_identical(self, tmp_path):
        items, spec = self._scene_items()
        payload = dataclasses.asdict(spec)
        save_dataset(tmp_path / "a", items, "train", "in-distribution", 9, payload)
        images, masks, _ = load_dataset(tmp_path / "a")
        reloaded = list(zip(images, masks))
        save_dataset(tmp_path / "b", reloaded, "train", "in-distribution", 9, payload)
        for rel in ("manifest.json", "images/00001.png", "masks/00002.png"):
            assert (tmp_path / "a" / rel).read_bytes() == (
                tmp_path / "b" / rel
            ).read_bytes()

    def test_background_only_kind_has_no_masks(self, tmp_path):
        images = [gen_noise(0, i, 16, 16) for i in range(2)]
        save_dataset(
            tmp_path / "noise",
            [(img, None) for img in images],
            dataset_id="noise",
            kind="noise",
            seed=0,
            spec_payload={"items": 2},
        )
        loaded, masks, manifest = load_dataset(tmp_path / "noise")
        assert masks is None
        assert loaded.shape == (2, 3, 16, 16)
        assert all(entry["mask"] is None for entry in manifest["items"])

    def test_unknown_kind_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            save_dataset(tmp_path / "x", [], "x", "mystery", 0, {})
        assert "mystery" not in DATASET_KINDS

    def test_digest_mismatch_detected(self, tmp_path):
        items, spec = self._scene_items(n=2)
        save_dataset(
            tmp_path / "d", items, "train", "in-distribution", 9,
            dataclasses.asdict(spec),
        )
        target = tmp_path / "d" / "images" / "00001.png"
        data = bytearray(target.read_bytes())
        data[-1] ^= 0xFF
        target.write_bytes(bytes(data))
        with pytest.raises(DatasetError, match="00001.png"):
            load_dataset(tmp_path / "d")

    def test_missing_file_detected(self, tmp_path):
        items, spec = self._scene_items(n=2)
        save_dataset(
            tmp_path / "d", items, "train", "in-distribution", 9,
            dataclasses.asdict(spec),
        )
        (tmp_path / "d" / "masks" / "00000.png").unlink()
        with pytest.raises(DatasetError, match="00000.png"):
            load_dataset(tmp_path / "d")

    def test_manifest_key_and_kind_validation(self, tmp_path):
        items, spec = self._scene_items(n=1)
        save_dataset(
            tmp_path / "d", items, "train", "in-distribution", 9,
            dataclasses.asdict(spec),
        )
        manifest_path = tmp_path / "d" / "manifest.json"
        manifest = json.loads(manifest_path.read_text())

        broken = dict(manifest)
        del broken["spec_hash"]
        manifest_path.write_text(json.dumps(broken))
        with pytest.raises(DatasetError, match="spec_hash"):
            load_dataset(tmp_path / "d")

        broken = dict(manifest)
        broken["kind"] = "mystery"
        manifest_path.write_text(json.dumps(broken))
        with pytest.raises(DatasetError, match="mystery"):
            load_dataset(tmp_path / "d")

        broken = dict(manifest)
        broken["items"] = [dict(broken["items"][0], mask=None)]
        manifest_path.write_text(json.dumps(broken))
        with pytest.raises(DatasetError, match="mask"):
            load_dataset(tmp_path / "d")

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DatasetError, match="manifest"):
            load_dataset(tmp_path / "nowhere")

    def test_empty_dataset_loads(self, tmp_path):
        save_dataset(tmp_path / "e", [], "empty", "noise", 0, {})
        images, masks, _ = load_dataset(tmp_path / "e")
        assert images.shape[0] == 0
        assert masks is None

    def test_manifest_hash_tracks_content(self, tmp_path):
        items, spec = self._scene_items(n=2)
        payload = dataclasses.asdict(spec)
        m1 = save_dataset(tmp_path / "a", items, "train", "in-distribution", 9, payload)
        m2 = save_dataset(tmp_path / "b", items, "train", "in-distribution", 9, payload)
        assert manifest_hash(m1) == manifest_hash(m2)
        m3 = save_dataset(
            tmp_path / "c", items[:1], "train", "in-distribution", 9, payload
        )
        assert manifest_hash(m3) != manifest_hash(m1)

    def test_payload_hash_is_order_insensitive(self):
        assert payload_hash({"a": 1, "b": 2}) == payload_hash({"b": 2, "a": 1})
        assert payload_hash({"a": 1}) != payload_hash({"a": 2})
