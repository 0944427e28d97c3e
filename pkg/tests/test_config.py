"""Tests for configuration loading, validation, and hashing."""

import json

import pytest

from softguard.config import DEFAULTS, ConfigError, ExperimentConfig
from softguard.distinct import IDSoftmaxMode
from softguard.heads import HeadKind


def _write(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


class TestLoading:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig.defaults()
        assert cfg.resolved == DEFAULTS
        assert cfg.seeds == [1, 2, 3]
        assert cfg.ece_bins == 15
        assert cfg.id_softmax_mode() is IDSoftmaxMode.SUB_VECTOR

    def test_partial_override_keeps_rest(self, tmp_path):
        cfg = ExperimentConfig.from_file(
            _write(tmp_path, {"data": {"train_items": 4}, "seeds": [7]})
        )
        assert cfg.data["train_items"] == 4
        assert cfg.data["height"] == DEFAULTS["data"]["height"]
        assert cfg.seeds == [7]

    def test_unknown_top_level_key(self, tmp_path):
        with pytest.raises(ConfigError, match="'datasets'"):
            ExperimentConfig.from_file(_write(tmp_path, {"datasets": {}}))

    def test_unknown_nested_key(self, tmp_path):
        with pytest.raises(ConfigError, match="'train.lr'"):
            ExperimentConfig.from_file(_write(tmp_path, {"train": {"lr": 0.1}}))

    def test_section_must_be_object(self, tmp_path):
        with pytest.raises(ConfigError, match="'train'"):
            ExperimentConfig.from_file(_write(tmp_path, {"train": 5}))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="JSON"):
            ExperimentConfig.from_file(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            ExperimentConfig.from_file(tmp_path / "absent.json")

    def test_non_object_root(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="object"):
            ExperimentConfig.from_file(path)


class TestValidation:
    def test_type_errors(self, tmp_path):
        with pytest.raises(ConfigError, match="integer"):
            ExperimentConfig.from_file(
                _write(tmp_path, {"train": {"epochs": 2.5}})
            )
        with pytest.raises(ConfigError, match="integer"):
            ExperimentConfig.from_file(
                _write(tmp_path, {"train": {"epochs": True}})
            )
        with pytest.raises(ConfigError, match="number"):
            ExperimentConfig.from_file(
                _write(tmp_path, {"train": {"learning_rate": "fast"}})
            )

    def test_range_errors_surface_at_load(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(_write(tmp_path, {"train": {"epochs": 0}}))
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(
                _write(tmp_path, {"data": {"bg_fraction": 1.5}})
            )
        with pytest.raises(ConfigError):
            ExperimentConfig.from_file(
                _write(tmp_path, {"metrics": {"id_softmax": "mystery"}})
            )

    def test_seed_list_rules(self, tmp_path):
        for bad in ([], [1, 1], [-1], [1.5], "1"):
            with pytest.raises(ConfigError, match="seeds"):
                ExperimentConfig.from_file(_write(tmp_path, {"seeds": bad}))

    def test_out_root_must_be_string(self, tmp_path):
        with pytest.raises(ConfigError, match="out_root"):
            ExperimentConfig.from_file(_write(tmp_path, {"out_root": ""}))


class TestAccessors:
    def test_scene_spec_reflects_data_section(self, tmp_path):
        cfg = ExperimentConfig.from_file(
            _write(tmp_path, {"data": {"height": 32, "width": 40, "seed": 3}})
        )
        spec = cfg.scene_spec()
        assert (spec.height, spec.width, spec.seed) == (32, 40, 3)

    def test_train_config_flows_through(self):
        cfg = ExperimentConfig.defaults()
        tc = cfg.train_config(HeadKind.IMPLICIT, seed=2)
        assert tc.head_kind is HeadKind.IMPLICIT
        assert tc.seed == 2
        assert tc.epochs == DEFAULTS["train"]["epochs"]
        assert tc.ece_bins == 15
        override = cfg.train_config(
            HeadKind.EXPLICIT, seed=1, ece_bins=10, id_softmax=IDSoftmaxMode.FULL_VECTOR
        )
        assert override.ece_bins == 10
        assert override.id_softmax is IDSoftmaxMode.FULL_VECTOR


class TestHash:
    def test_stable_for_equal_content(self, tmp_path):
        a = ExperimentConfig.from_file(_write(tmp_path, {"seeds": [1, 2, 3]}))
        b = ExperimentConfig.defaults()
        assert a.config_hash == b.config_hash

    def test_changes_with_content(self, tmp_path):
        a = ExperimentConfig.defaults()
        b = ExperimentConfig.from_file(_write(tmp_path, {"data": {"seed": 99}}))
        assert a.config_hash != b.config_hash

    def test_json_round_trip(self):
        cfg = ExperimentConfig.defaults()
        rebuilt = ExperimentConfig(json.loads(cfg.to_json()))
        assert rebuilt.config_hash == cfg.config_hash
