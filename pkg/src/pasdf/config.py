"""Run configuration: one JSON document driving every pipeline stage.

Deserialization is strict.  Unknown keys, wrong types, and out-of-range
values all raise ConfigValidationError before any work starts, so a
failed run never leaves partial artifacts behind.  Missing sections and
keys fall back to the defaults below.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .encoding import EncodingConfig
from .errors import ConfigValidationError, InvalidParameterError
from .network import NetworkConfig
from .queries import QueryCounts
from .registration import (
    DEFAULT_CHAMFER_THRESHOLD,
    DEFAULT_MAX_ROUNDS,
    DEFAULT_THRESHOLD_STEP,
)
from .repair import DEFAULT_EMD_SUBSAMPLE, DEFAULT_REPAIR_POINTS
from .scoring import DEFAULT_TOP_K
from .training import TrainConfig

BENCH_SHAPE_KINDS = ("sphere", "box", "torus", "capsule")
BENCH_ANOMALY_KINDS = ("dent", "bulge", "crop", "noise_patch")


@dataclass(frozen=True)
class IoConfig:
    """Where a run reads its clouds and writes its artifacts."""

    train_dir: str = "data/train"
    test_dir: str = "data/test"
    out_dir: str = "out"
    labels: str | None = None

    def __post_init__(self) -> None:
        for name in ("train_dir", "test_dir", "out_dir"):
            if not getattr(self, name):
                raise InvalidParameterError(f"{name} must be a non-empty path")


@dataclass(frozen=True)
class AlignConfig:
    """Knobs of the pose alignment loop exposed to configuration."""

    voxel_size: float | None = None
    chamfer_threshold: float = DEFAULT_CHAMFER_THRESHOLD
    threshold_step: float = DEFAULT_THRESHOLD_STEP
    max_rounds: int = DEFAULT_MAX_ROUNDS

    def __post_init__(self) -> None:
        if self.voxel_size is not None and self.voxel_size <= 0.0:
            raise InvalidParameterError("voxel_size must be positive or null")
        if self.chamfer_threshold <= 0.0:
            raise InvalidParameterError("chamfer_threshold must be positive")
        if self.threshold_step <= 0.0:
            raise InvalidParameterError("threshold_step must be positive")
        if self.max_rounds < 1:
            raise InvalidParameterError("max_rounds must be >= 1")


@dataclass(frozen=True)
class GridConfig:
    """Isosurface evaluation lattice; the bbox expansion is shared with
    query sampling via QueryCounts."""

    resolution: int = 128

    def __post_init__(self) -> None:
        if self.resolution < 8:
            raise InvalidParameterError("grid resolution must be >= 8")


@dataclass(frozen=True)
class ScoreConfig:
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self) -> None:
        if self.top_k < 1:
            raise InvalidParameterError("top_k must be >= 1")


@dataclass(frozen=True)
class RepairConfig:
    n_points: int = DEFAULT_REPAIR_POINTS
    emd_subsample: int = DEFAULT_EMD_SUBSAMPLE

    def __post_init__(self) -> None:
        if self.n_points < 1:
            raise InvalidParameterError("n_points must be >= 1")
        if self.emd_subsample < 1:
            raise InvalidParameterError("emd_subsample must be >= 1")


@dataclass(frozen=True)
class BenchConfig:
    """Synthetic benchmark layout: which shapes, how many cases, and how
    anomalies are sized relative to each shape's bounding-box diagonal.

    The ranking pool holds displacement anomalies by default.  Cropped
    clouds leave every surviving point on the normal surface, so a
    surface-distance score cannot rank them above normal clouds; they
    run on a separate repair track (crop_cases) where removal is exactly
    what reconstruction must undo.
    """

    shapes: tuple[str, ...] = BENCH_SHAPE_KINDS
    normal_cases: int = 10
    anomalous_cases: int = 10
    cloud_points: int = 2048
    anomaly_kinds: tuple[str, ...] = (
        "dent", "dent", "dent", "dent",
        "bulge", "bulge", "bulge",
        "noise_patch", "noise_patch", "noise_patch",
    )
    crop_cases: int = 2
    magnitude_frac: float = 0.05
    radius_frac: float = 0.15
    crop_radius_frac: float = 0.22
    pam_enabled: bool = True

    def __post_init__(self) -> None:
        if not self.shapes:
            raise InvalidParameterError("bench needs at least one shape")
        for kind in self.shapes:
            if kind not in BENCH_SHAPE_KINDS:
                raise InvalidParameterError(f"unknown bench shape '{kind}'")
        if self.normal_cases < 1 or self.anomalous_cases < 1:
            raise InvalidParameterError("case counts must be >= 1")
        if self.cloud_points < 16:
            raise InvalidParameterError("cloud_points must be >= 16")
        if len(self.anomaly_kinds) != self.anomalous_cases:
            raise InvalidParameterError(
                "anomaly_kinds must list one kind per anomalous case"
            )
        for kind in self.anomaly_kinds:
            if kind not in BENCH_ANOMALY_KINDS:
                raise InvalidParameterError(f"unknown anomaly kind '{kind}'")
        if self.crop_cases < 0:
            raise InvalidParameterError("crop_cases must be >= 0")
        for name in ("magnitude_frac", "radius_frac", "crop_radius_frac"):
            if getattr(self, name) <= 0.0:
                raise InvalidParameterError(f"{name} must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; a single root seed feeds every stage
    through named sub-streams."""

    seed: int = 0
    io: IoConfig = field(default_factory=IoConfig)
    counts: QueryCounts = field(default_factory=QueryCounts)
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    scoring: ScoreConfig = field(default_factory=ScoreConfig)
    repair: RepairConfig = field(default_factory=RepairConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise InvalidParameterError("seed must be >= 0")
        if self.network.input_dim != self.encoding.dim:
            raise ConfigValidationError(
                f"network.input_dim ({self.network.input_dim}) must equal the "
                f"encoding dimension ({self.encoding.dim})"
            )


def _as_int(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise TypeError(f"expected an integer, got {value!r}")
    return value


def _as_float(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise TypeError(f"expected a number, got {value!r}")
    return float(value)


def _as_bool(value: Any) -> bool:
    if not isinstance(value, bool):
        raise TypeError(f"expected a boolean, got {value!r}")
    return value


def _as_str(value: Any) -> str:
    if not isinstance(value, str):
        raise TypeError(f"expected a string, got {value!r}")
    return value


def _as_optional_float(value: Any) -> float | None:
    return None if value is None else _as_float(value)


def _as_optional_int(value: Any) -> int | None:
    return None if value is None else _as_int(value)


def _as_optional_str(value: Any) -> str | None:
    return None if value is None else _as_str(value)


def _as_str_tuple(value: Any) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise TypeError(f"expected a list of strings, got {value!r}")
    return tuple(value)


_SECTION_FIELDS: dict[str, dict[str, Callable[[Any], Any]]] = {
    "io": {
        "train_dir": _as_str,
        "test_dir": _as_str,
        "out_dir": _as_str,
        "labels": _as_optional_str,
    },
    "counts": {
        "volume": _as_int,
        "bbox": _as_int,
        "surface": _as_int,
        "bbox_expand": _as_float,
    },
    "encoding": {
        "num_frequencies": _as_int,
        "include_input": _as_bool,
    },
    "network": {
        "input_dim": _as_int,
        "hidden_width": _as_int,
        "num_layers": _as_int,
        "skip_layer": _as_optional_int,
        "dropout": _as_float,
    },
    "training": {
        "learning_rate": _as_float,
        "epochs": _as_int,
        "batch_size": _as_int,
        "d_max": _as_float,
        "beta1": _as_float,
        "beta2": _as_float,
        "epsilon": _as_float,
        "clamp_targets": _as_bool,
    },
    "align": {
        "voxel_size": _as_optional_float,
        "chamfer_threshold": _as_float,
        "threshold_step": _as_float,
        "max_rounds": _as_int,
    },
    "grid": {
        "resolution": _as_int,
    },
    "scoring": {
        "top_k": _as_int,
    },
    "repair": {
        "n_points": _as_int,
        "emd_subsample": _as_int,
    },
    "bench": {
        "shapes": _as_str_tuple,
        "normal_cases": _as_int,
        "anomalous_cases": _as_int,
        "cloud_points": _as_int,
        "anomaly_kinds": _as_str_tuple,
        "crop_cases": _as_int,
        "magnitude_frac": _as_float,
        "radius_frac": _as_float,
        "crop_radius_frac": _as_float,
        "pam_enabled": _as_bool,
    },
}

_SECTION_FACTORIES: dict[str, Callable[..., Any]] = {
    "io": IoConfig,
    "counts": QueryCounts,
    "encoding": EncodingConfig,
    "network": NetworkConfig,
    "training": TrainConfig,
    "align": AlignConfig,
    "grid": GridConfig,
    "scoring": ScoreConfig,
    "repair": RepairConfig,
    "bench": BenchConfig,
}


def _read_section(name: str, data: Mapping[str, Any]) -> Any:
    fields_spec = _SECTION_FIELDS[name]
    unknown = sorted(set(data) - set(fields_spec))
    if unknown:
        raise ConfigValidationError(f"unknown key '{name}.{unknown[0]}'")
    kwargs: dict[str, Any] = {}
    for key, cast in fields_spec.items():
        if key in data:
            try:
                kwargs[key] = cast(data[key])
            except TypeError as error:
                raise ConfigValidationError(f"{name}.{key}: {error}") from error
    try:
        return _SECTION_FACTORIES[name](**kwargs)
    except InvalidParameterError as error:
        raise ConfigValidationError(f"{name}: {error}") from error


def from_document(document: Mapping[str, Any]) -> RunConfig:
    """Build a validated RunConfig from a parsed JSON document."""
    if not isinstance(document, Mapping):
        raise ConfigValidationError("configuration must be a JSON object")
    allowed = {"seed"} | set(_SECTION_FIELDS)
    unknown = sorted(set(document) - allowed)
    if unknown:
        raise ConfigValidationError(f"unknown key '{unknown[0]}'")
    kwargs: dict[str, Any] = {}
    if "seed" in document:
        try:
            kwargs["seed"] = _as_int(document["seed"])
        except TypeError as error:
            raise ConfigValidationError(f"seed: {error}") from error
    for name in _SECTION_FIELDS:
        if name in document:
            section = document[name]
            if not isinstance(section, Mapping):
                raise ConfigValidationError(f"section '{name}' must be an object")
            kwargs[name] = _read_section(name, section)
    try:
        return RunConfig(**kwargs)
    except InvalidParameterError as error:
        raise ConfigValidationError(str(error)) from error


def to_document(config: RunConfig) -> dict[str, Any]:
    """Emit the complete JSON document for a config, defaults included.

    The training seed is deliberately absent: every stage derives its
    randomness from the root seed, so the document has exactly one.
    """
    return {
        "seed": config.seed,
        "io": {
            "train_dir": config.io.train_dir,
            "test_dir": config.io.test_dir,
            "out_dir": config.io.out_dir,
            "labels": config.io.labels,
        },
        "counts": {
            "volume": config.counts.volume,
            "bbox": config.counts.bbox,
            "surface": config.counts.surface,
            "bbox_expand": config.counts.bbox_expand,
        },
        "encoding": config.encoding.to_dict(),
        "network": config.network.to_dict(),
        "training": {
            key: value
            for key, value in config.training.to_dict().items()
            if key != "seed"
        },
        "align": {
            "voxel_size": config.align.voxel_size,
            "chamfer_threshold": config.align.chamfer_threshold,
            "threshold_step": config.align.threshold_step,
            "max_rounds": config.align.max_rounds,
        },
        "grid": {
            "resolution": config.grid.resolution,
        },
        "scoring": {
            "top_k": config.scoring.top_k,
        },
        "repair": {
            "n_points": config.repair.n_points,
            "emd_subsample": config.repair.emd_subsample,
        },
        "bench": {
            "shapes": list(config.bench.shapes),
            "normal_cases": config.bench.normal_cases,
            "anomalous_cases": config.bench.anomalous_cases,
            "cloud_points": config.bench.cloud_points,
            "anomaly_kinds": list(config.bench.anomaly_kinds),
            "crop_cases": config.bench.crop_cases,
            "magnitude_frac": config.bench.magnitude_frac,
            "radius_frac": config.bench.radius_frac,
            "crop_radius_frac": config.bench.crop_radius_frac,
            "pam_enabled": config.bench.pam_enabled,
        },
    }


def serialize(config: RunConfig) -> str:
    return json.dumps(to_document(config), indent=2) + "\n"


def deserialize(text: str) -> RunConfig:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as error:
        raise ConfigValidationError(f"configuration is not valid JSON: {error}")
    return from_document(document)


def load_config(path: str | Path) -> RunConfig:
    source = Path(path)
    if not source.is_file():
        raise FileNotFoundError(f"configuration file not found: {source}")
    return deserialize(source.read_text())


def save_config(config: RunConfig, path: str | Path) -> None:
    Path(path).write_text(serialize(config))
