"""Flat YAML pipeline configuration.

Every key has a default mirroring the full-scale training recipe, so an empty
config file reproduces it. Unknown keys are rejected rather than ignored.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import yaml

from .inference import ThresholdPolicy, TTAConfig
from .network import NetworkConfig
from .postprocess import PostprocessConfig
from .trainer import TrainConfig

FRAMEWORKS = ("multitask", "cascaded", "ensemble")
OUTPUT_ENV_VAR = "TUMORSEG_OUTPUT"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    data_root: str = "data"
    output_root: str = "out"
    framework: str = "multitask"
    # network
    patch_size: tuple[int, int, int] = (128, 128, 128)
    depth: int = 5
    base_filters: int = 16
    groupnorm_groups: int = 8
    dropout_rate: float = 0.3
    # training
    initial_lr: float = 5e-4
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    early_stop_patience: int = 50
    max_epochs: int = 300
    batch_size: int = 1
    l2_weight: float = 1e-5
    augment: bool = True
    seed: int = 0
    val_fraction: float = 0.1
    # thresholds
    wt_threshold: float = 0.5
    tc_threshold: float = 0.5
    et_threshold: float = 0.4
    et_fallback_ladder: tuple[float, ...] = (0.3, 0.2, 0.1)
    # post-processing
    min_component_voxels: int = 10
    min_et_voxels: int = 50
    connectivity: int = 26
    # test-time augmentation
    tta_enabled: bool = True

    def __post_init__(self):
        if self.framework not in FRAMEWORKS:
            raise ConfigError(
                f"framework must be one of {FRAMEWORKS}, got {self.framework!r}"
            )
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must be in [0, 1)")
        # constructing the sub-configs validates their own invariants
        self.network_config()
        self.train_config()
        self.threshold_policy()
        self.postprocess_config()

    def network_config(self, out_channels: int = 3) -> NetworkConfig:
        return NetworkConfig(
            out_channels=out_channels,
            patch_size=self.patch_size,
            depth=self.depth,
            base_filters=self.base_filters,
            groupnorm_groups=self.groupnorm_groups,
            dropout_rate=self.dropout_rate,
            weight_decay=self.l2_weight,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            initial_lr=self.initial_lr,
            plateau_factor=self.plateau_factor,
            plateau_patience=self.plateau_patience,
            early_stop_patience=self.early_stop_patience,
            max_epochs=self.max_epochs,
            batch_size=self.batch_size,
            l2_weight=self.l2_weight,
            augment=self.augment,
            seed=self.seed,
        )

    def threshold_policy(self) -> ThresholdPolicy:
        return ThresholdPolicy(
            wt_threshold=self.wt_threshold,
            tc_threshold=self.tc_threshold,
            et_threshold=self.et_threshold,
            et_fallback_ladder=self.et_fallback_ladder,
        )

    def postprocess_config(self) -> PostprocessConfig:
        return PostprocessConfig(
            min_component_voxels=self.min_component_voxels,
            min_et_voxels=self.min_et_voxels,
            connectivity=self.connectivity,
        )

    def tta_config(self) -> TTAConfig:
        return TTAConfig(enabled=self.tta_enabled)

    def resolved_output_root(self) -> Path:
        """output_root, overridable through the TUMORSEG_OUTPUT env var."""
        return Path(os.environ.get(OUTPUT_ENV_VAR, self.output_root))


_TUPLE_KEYS = {"patch_size": 3, "et_fallback_ladder": None}


def _coerce(key: str, value):
    if key in _TUPLE_KEYS:
        if key == "patch_size" and isinstance(value, int):
            return (value, value, value)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key} must be a list")
        expected = _TUPLE_KEYS[key]
        if expected is not None and len(value) != expected:
            raise ConfigError(f"{key} must have {expected} entries")
        return tuple(value)
    return value


def config_from_dict(raw: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {key: _coerce(key, value) for key, value in raw.items()}
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Parse a YAML config file; a missing path yields all defaults."""
    if path is None:
        return PipelineConfig()
    text = Path(path).read_text()
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping of keys to values")
    return config_from_dict(raw)


def dump_config(config: PipelineConfig, path: str | Path):
    raw = dataclasses.asdict(config)
    raw["patch_size"] = list(config.patch_size)
    raw["et_fallback_ladder"] = list(config.et_fallback_ladder)
    Path(path).write_text(yaml.safe_dump(raw, sort_keys=False))
