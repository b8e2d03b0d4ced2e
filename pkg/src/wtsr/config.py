"""Training configuration: defaults, strict JSON parsing and serialization."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

SPEC_OVERRIDE_KEYS = ("feature_channels", "n_groups", "n_blocks_per_group", "ca_reduction", "mean_shift")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the JSON path of the offending field."""


@dataclass
class TrainConfig:
    scale: int = 3
    patch: int = 48
    batch: int = 16
    lr: float = 1e-4
    epochs_backbone: int = 200
    epochs_tpm: int = 50
    epochs_tfm: int = 200
    patches_per_image_per_epoch: int = 16
    seed: int = 0
    backbone: dict = field(default_factory=dict)
    tpm: dict = field(default_factory=dict)
    tfm: dict = field(default_factory=dict)
    manifest: str | None = None
    output_dir: str | None = "runs"
    name: str = "default"

    def __post_init__(self):
        validate(self)

    def to_dict(self):
        return asdict(self)

    @property
    def run_dir(self):
        if self.output_dir is None:
            return None
        return Path(self.output_dir) / self.name


_COUNTS = ("patch", "batch", "epochs_backbone", "epochs_tpm", "epochs_tfm", "patches_per_image_per_epoch")


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def validate(cfg):
    for name in ("scale", "seed", *_COUNTS):
        if not _is_int(getattr(cfg, name)):
            raise ConfigError(f"$.{name}: expected integer, got {type(getattr(cfg, name)).__name__}")
    # zero epochs is allowed: the stage then returns its initialization
    for name in _COUNTS:
        low = 0 if name.startswith("epochs") else 1
        if getattr(cfg, name) < low:
            raise ConfigError(f"$.{name}: must be >= {low}, got {getattr(cfg, name)}")
    if cfg.scale not in (2, 3, 4):
        raise ConfigError(f"$.scale: must be one of 2, 3, 4, got {cfg.scale}")
    if isinstance(cfg.lr, bool) or not isinstance(cfg.lr, (int, float)) or not cfg.lr > 0:
        raise ConfigError(f"$.lr: expected positive number, got {cfg.lr!r}")
    for stage in ("backbone", "tpm", "tfm"):
        over = getattr(cfg, stage)
        if not isinstance(over, dict):
            raise ConfigError(f"$.{stage}: expected object, got {type(over).__name__}")
        for k, v in over.items():
            if k not in SPEC_OVERRIDE_KEYS:
                raise ConfigError(f"$.{stage}.{k}: unknown key")
            if k == "mean_shift":
                if not isinstance(v, bool):
                    raise ConfigError(f"$.{stage}.{k}: expected boolean, got {type(v).__name__}")
            elif not _is_int(v) or v < 1:
                raise ConfigError(f"$.{stage}.{k}: expected positive integer, got {v!r}")
    for name in ("manifest", "output_dir"):
        v = getattr(cfg, name)
        if v is not None and not isinstance(v, str):
            raise ConfigError(f"$.{name}: expected string or null, got {type(v).__name__}")
    if not isinstance(cfg.name, str) or not cfg.name:
        raise ConfigError("$.name: expected non-empty string")


def config_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError(f"$: expected object, got {type(doc).__name__}")
    known = {f.name for f in fields(TrainConfig)}
    for k in doc:
        if k not in known:
            raise ConfigError(f"$.{k}: unknown key")
    return TrainConfig(**doc)


def parse_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"$: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def serialize_config(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True)
