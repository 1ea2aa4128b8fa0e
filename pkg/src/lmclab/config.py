"""Experiment configuration: YAML files, dotted overrides and validation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .trainer import TrainConfig

PERM_MODES = ("none", "random", "weight_match")
PAIRINGS = ("all", "disjoint")
OUTPUT_DIR_ENV = "LMCLAB_OUTPUT_DIR"
MNIST_DIR_ENV = "LMCLAB_MNIST_DIR"

IDX_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class DatasetSpec:
    """Where the data comes from.

    ``kind="blobs"`` generates :func:`lmclab.dataio.synth_blobs` data and
    splits it into train/test; ``kind="idx"`` reads the four standard
    MNIST-layout files from ``data_dir`` (``.gz`` variants accepted).
    """

    kind: str = "blobs"
    name: str = "blobs"
    n: int = 8000
    dim: int = 32
    classes: int = 10
    sep: float = 4.0
    seed: int = 123
    test_fraction: float = 0.25
    split_seed: int = 7
    data_dir: str | None = None

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ConfigError(f"dataset.kind must be 'blobs' or 'idx', got {self.kind!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("dataset.test_fraction must lie in (0, 1)")

    def resolved_dir(self) -> Path:
        d = self.data_dir or os.environ.get(MNIST_DIR_ENV)
        if not d:
            raise ConfigError(f"dataset.data_dir is unset and ${MNIST_DIR_ENV} is empty")
        return Path(d)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    base_dims: tuple[int, ...] = (32, 128, 128, 128, 10)
    with_bias: bool = True
    multipliers: tuple[str, ...] = ("1/4", "1", "4")
    seeds: tuple[int, ...] = (0, 1, 2)
    pairing: str = "all"
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: int = 25
    perm_mode: str = "none"
    perm_seed: int = 0
    wm_max_sweeps: int = 50
    calibration_fraction: float = 0.2
    calibration_seed: int = 0
    diagnose_lambda: float = 0.5
    overlap_mode: str = "min"
    aggregation: str = "sample"
    output_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "base_dims", tuple(int(d) for d in self.base_dims))
        try:
            mults = tuple(Fraction(str(m)).limit_denominator(1 << 16) for m in self.multipliers)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"bad width multiplier: {exc}") from None
        if any(m <= 0 for m in mults):
            raise ConfigError("width multipliers must be positive")
        if len(set(mults)) != len(mults):
            raise ConfigError("width multipliers must be distinct")
        object.__setattr__(self, "multipliers", tuple(str(m) for m in sorted(mults)))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.base_dims) < 2:
            raise ConfigError("base_dims needs at least input and output dims")
        if not self.multipliers:
            raise ConfigError("at least one width multiplier is required")
        if len(self.seeds) < 2:
            raise ConfigError("at least two seeds are required to form a pair")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {PAIRINGS}")
        if self.pairing == "disjoint" and len(self.seeds) % 2:
            raise ConfigError("disjoint pairing needs an even number of seeds")
        if self.perm_mode not in PERM_MODES:
            raise ConfigError(f"perm_mode must be one of {PERM_MODES}")
        if self.grid < 2:
            raise ConfigError("grid must be >= 2")
        if not 0.0 <= self.diagnose_lambda <= 1.0:
            raise ConfigError("diagnose_lambda must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["base_dims"] = list(self.base_dims)
        d["multipliers"] = list(self.multipliers)
        d["seeds"] = list(self.seeds)
        return d

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("output_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def out_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_DIR_ENV) or "lmclab-out")


def _coerce(f: dataclasses.Field, v: Any, key: str) -> Any:
    """Convert YAML/flag scalars to the field's type (PyYAML reads ``1e-4`` as a string)."""
    default = f.default
    if default is dataclasses.MISSING:
        return v
    try:
        if isinstance(default, bool):
            if isinstance(v, str) and v.lower() in ("true", "false"):
                return v.lower() == "true"
            if not isinstance(v, bool):
                raise ValueError(v)
            return v
        if isinstance(default, float):
            if isinstance(v, bool):
                raise ValueError(v)
            return float(v)
        if isinstance(default, int):
            if isinstance(v, bool) or float(v) != int(float(v)):
                raise ValueError(v)
            return int(float(v))
        if isinstance(default, tuple):
            if isinstance(v, str):
                v = [x.strip() for x in v.split(",") if x.strip()]
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                v = [v]
            if not isinstance(v, (list, tuple)):
                raise ValueError(v)
            return tuple(v)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {v!r}") from None
    return v


def _build(cls, data: dict, prefix: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(prefix + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        if k == "dataset":
            v = _build(DatasetSpec, v, "dataset.")
        elif k == "train":
            v = _build(TrainConfig, v, "train.")
        elif v is not None:
            v = _coerce(fields[k], v, prefix + k)
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {prefix or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def set_dotted(data: dict, key: str, value: Any) -> None:
    """Set ``a.b.c`` in a nested dict, creating intermediate mappings."""
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not a mapping")
    node[parts[-1]] = value


def preset_path(name: str) -> Path:
    return Path(__file__).with_name("presets") / f"{name}.yaml"


def load_config(path=None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Read a YAML config (or start from defaults) and apply dotted overrides.

    ``path`` may also name a bundled preset such as ``synth_ci``.
    """
    data: dict = {}
    if path is not None:
        if not Path(path).exists() and preset_path(str(path)).exists():
            path = preset_path(str(path))
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    for k, v in (overrides or {}).items():
        set_dotted(data, k, v)
    return config_from_dict(data)


def override_keys() -> list[str]:
    """Every settable dotted key, for building CLI flags."""
    keys = []
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "dataset":
            keys += [f"dataset.{g.name}" for g in dataclasses.fields(DatasetSpec)]
        elif f.name == "train":
            keys += [f"train.{g.name}" for g in dataclasses.fields(TrainConfig)]
        else:
            keys.append(f.name)
    return keys
