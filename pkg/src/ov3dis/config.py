"""Pipeline configuration: defaults, file loading, overrides, validation.

Config files are flat JSON objects whose keys are exactly the dataclass
field names; unknown keys are hard errors so typos cannot silently fall
back to defaults. CLI ``--set key=value`` overrides take precedence over
the file, and every run echoes its effective config next to its outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

PROTOCOLS = ("top1", "topk")
MATCH_MODES = ("frame-wise", "tracklet-wise")
MODES = ("auto", "2d-only", "3d-only")

_UNIT_THRESHOLDS = (
    "tau_img", "tau_inst", "tau_tracking", "tau_merge", "tau_ref",
    "tau_incl", "nms_iou",
)


@dataclass
class PipelineConfig:
    tau_img: float = 0.1
    tau_inst: float = 0.3
    tau_tracking: float = 0.3
    tau_merge: float = 0.3
    tau_ref: float = 0.4
    tau_incl: float = 0.99
    tau_sms: float = 0.0
    nms_iou: float = 0.95
    frame_stride: int = 5
    top_views: int = 20
    scale_levels: int = 3
    scale_expansion: float = 0.2
    top_k: int = 300
    protocol: str = "top1"
    refinement_enabled: bool = True
    match_mode: str = "frame-wise"
    principal_axis_correction: bool = False
    delta_depth: float = 0.05
    overlap_removal_enabled: bool = True
    merging_enabled: bool = True
    sms_enabled: bool = True

    def __post_init__(self):
        for name in _UNIT_THRESHOLDS:
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ConfigError(f"{name} must be in [0, 1], got {value}")
        if self.delta_depth <= 0:
            raise ConfigError(f"delta_depth must be > 0, got {self.delta_depth}")
        if self.frame_stride < 1:
            raise ConfigError("frame_stride must be >= 1")
        if self.top_views < 1:
            raise ConfigError("top_views must be >= 1")
        if self.scale_levels < 1:
            raise ConfigError("scale_levels must be >= 1")
        if self.scale_expansion < 0:
            raise ConfigError("scale_expansion must be >= 0")
        if self.top_k < 1:
            raise ConfigError("top_k must be >= 1")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.match_mode not in MATCH_MODES:
            raise ConfigError(f"match_mode must be one of {MATCH_MODES}, got {self.match_mode!r}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        coerced = {}
        for key, value in data.items():
            coerced[key] = _coerce(known[key].type, value, key)
        return cls(**coerced)

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        merged = self.as_dict()
        known = set(merged)
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged.update(overrides)
        return PipelineConfig.from_dict(merged)


def _coerce(type_name, value, key):
    """Coerce JSON/CLI values to field types; reject mismatches loudly."""
    if type_name in ("float", float):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"{key} must be a number")
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {value!r} as float") from None
    if type_name in ("int", int):
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be an integer")
        if isinstance(value, str):
            try:
                return int(value)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {value!r} as int") from None
        if isinstance(value, float) and value != int(value):
            raise ConfigError(f"{key} must be an integer, got {value}")
        return int(value)
    if type_name in ("bool", bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str):
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
        raise ConfigError(f"{key}: cannot parse {value!r} as bool")
    if type_name in ("str", str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string")
        return value
    raise ConfigError(f"unsupported config field type for {key}")


def parse_set_overrides(pairs: list[str]) -> dict:
    """Parse repeated --set key=value CLI arguments."""
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out
