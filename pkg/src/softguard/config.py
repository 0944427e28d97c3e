"""Experiment configuration: defaults, strict JSON loading, content hash.

A config file is a JSON object that may override any subset of DEFAULTS;
unknown keys anywhere in the tree are rejected so typos cannot silently
fall back to defaults.  The resolved config is echoed into every report
and hashed (canonical JSON, SHA-256) for provenance.
"""

from __future__ import annotations

import json
import numbers
from pathlib import Path
from typing import Mapping, Optional, Union

from .data import SceneSpec, payload_hash
from .distinct import IDSoftmaxMode
from .heads import HeadKind
from .model import TrainConfig

__all__ = ["ConfigError", "DEFAULTS", "ExperimentConfig"]


class ConfigError(RuntimeError):
    """Raised for unreadable, malformed, or out-of-range configuration."""


DEFAULTS: dict = {
    "out_root": "runs",
    "data": {
        "height": 48,
        "width": 48,
        "num_classes": 5,
        "train_items": 512,
        "val_items": 128,
        "noise_items": 64,
        "texture_items": 64,
        "min_shapes": 1,
        "max_shapes": 4,
        "bg_fraction": 0.73,
        "color_jitter": 0.08,
        "noise_amplitude": 0.05,
        "seed": 1,
    },
    "train": {
        "learning_rate": 0.05,
        "momentum": 0.9,
        "epochs": 30,
        "batch_size": 8,
    },
    "metrics": {
        "ece_bins": 15,
        "id_softmax": "sub",
    },
    "seeds": [1, 2, 3],
}


def _merge(base: Mapping, override: Mapping, prefix: str) -> dict:
    out = dict(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(base[key], Mapping):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {prefix + key!r} must be an object")
            out[key] = _merge(base[key], value, prefix + key + ".")
        else:
            out[key] = value
    return out


def _require_int(section: Mapping, key: str, minimum: int, prefix: str) -> int:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"config key {prefix + key!r} must be an integer")
    if value < minimum:
        raise ConfigError(f"config key {prefix + key!r} must be >= {minimum}")
    return value


def _require_number(section: Mapping, key: str, prefix: str) -> float:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigError(f"config key {prefix + key!r} must be a number")
    return float(value)


class ExperimentConfig:
    """A fully resolved configuration (defaults + file overrides)."""

    def __init__(self, resolved: dict):
        self.resolved = resolved
        self._validate()

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls(json.loads(json.dumps(DEFAULTS)))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        try:
            payload = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        if not isinstance(payload, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        return cls(_merge(DEFAULTS, payload, ""))

    def _validate(self) -> None:
        cfg = self.resolved
        if not isinstance(cfg.get("out_root"), str) or not cfg["out_root"]:
            raise ConfigError("config key 'out_root' must be a non-empty string")

        data = cfg["data"]
        for key in ("train_items", "val_items", "noise_items", "texture_items"):
            _require_int(data, key, 1, "data.")
        for key in ("height", "width", "num_classes", "min_shapes", "max_shapes", "seed"):
            _require_int(data, key, 0, "data.")
        for key in ("bg_fraction", "color_jitter", "noise_amplitude"):
            _require_number(data, key, "data.")

        train = cfg["train"]
        _require_number(train, "learning_rate", "train.")
        _require_number(train, "momentum", "train.")
        _require_int(train, "epochs", 1, "train.")
        _require_int(train, "batch_size", 1, "train.")

        metrics = cfg["metrics"]
        _require_int(metrics, "ece_bins", 1, "metrics.")
        if not isinstance(metrics["id_softmax"], str):
            raise ConfigError("config key 'metrics.id_softmax' must be a string")

        seeds = cfg["seeds"]
        if (
            not isinstance(seeds, list)
            or not seeds
            or any(isinstance(s, bool) or not isinstance(s, int) or s < 0 for s in seeds)
        ):
            raise ConfigError(
                "config key 'seeds' must be a non-empty list of non-negative integers"
            )
        if len(set(seeds)) != len(seeds):
            raise ConfigError("config key 'seeds' must not repeat values")

        # Construct the typed views once so range errors surface at load time.
        try:
            self.scene_spec()
            self.id_softmax_mode()
            self.train_config(HeadKind.EXPLICIT, seeds[0])
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    # --- typed accessors ---

    @property
    def out_root(self) -> Path:
        return Path(self.resolved["out_root"])

    @property
    def data(self) -> dict:
        return self.resolved["data"]

    @property
    def seeds(self) -> list:
        return list(self.resolved["seeds"])

    @property
    def ece_bins(self) -> int:
        return self.resolved["metrics"]["ece_bins"]

    def id_softmax_mode(self) -> IDSoftmaxMode:
        return IDSoftmaxMode.parse(self.resolved["metrics"]["id_softmax"])

    def scene_spec(self) -> SceneSpec:
        d = self.data
        return SceneSpec(
            height=d["height"],
            width=d["width"],
            num_classes=d["num_classes"],
            min_shapes=d["min_shapes"],
            max_shapes=d["max_shapes"],
            bg_fraction=d["bg_fraction"],
            color_jitter=d["color_jitter"],
            noise_amplitude=d["noise_amplitude"],
            seed=d["seed"],
        )

    def train_config(
        self,
        head_kind: HeadKind,
        seed: int,
        ece_bins: Optional[int] = None,
        id_softmax: Optional[IDSoftmaxMode] = None,
    ) -> TrainConfig:
        t = self.resolved["train"]
        return TrainConfig(
            learning_rate=t["learning_rate"],
            momentum=t["momentum"],
            epochs=t["epochs"],
            batch_size=t["batch_size"],
            seed=seed,
            head_kind=head_kind,
            ece_bins=self.ece_bins if ece_bins is None else ece_bins,
            id_softmax=self.id_softmax_mode() if id_softmax is None else id_softmax,
        )

    @property
    def config_hash(self) -> str:
        return payload_hash(self.resolved)

    def to_json(self) -> str:
        return json.dumps(self.resolved, sort_keys=True, indent=2) + "\n"
