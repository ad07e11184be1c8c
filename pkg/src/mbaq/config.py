"""Run configuration and the key/value config-file format.

Config files are plain text, one `key = value` per line, `#` comments.
Nested sections use dotted keys (`scene.width = 256`, `trainer.p0 = 0.8`).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .accuracy import DetectorConfig
from .errors import InvalidConfigError, ParseError
from .frames import SceneConfig
from .training import TrainerConfig


@dataclass(frozen=True)
class RunConfig:
    """Top-level knobs for corpus generation, training, and sweeps."""

    seed: int = 1
    n_scenes: int = 20
    frames_per_scene: int = 1
    interval: int = 1
    tau: float = 0.02
    iou_thresh: float = 0.5
    binary_qp_high: int = 30
    binary_qp_low: int = 40
    variance_strength: float = 1.0
    variance_clamp: int = 6
    variance_flat_low_qp: bool = True
    run_uniform: bool = True
    run_binary_roi: bool = True
    run_variance_aq: bool = True
    pet_shared: bool = False
    scene: SceneConfig = field(default_factory=SceneConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        if self.interval < 1:
            raise InvalidConfigError("interval must be >= 1")
        if self.frames_per_scene < 1:
            raise InvalidConfigError("frames_per_scene must be >= 1")
        if self.n_scenes < 1:
            raise InvalidConfigError("n_scenes must be >= 1")


def parse_kv_file(path) -> dict[str, str]:
    """Parse `key = value` lines into a flat string dict."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values


def _coerce(raw: str, target_type, key: str):
    try:
        if target_type is bool or target_type == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        if target_type is tuple:
            return tuple(float(tok) for tok in raw.replace(",", " ").split())
        return raw
    except ValueError as exc:
        raise InvalidConfigError(f"config key {key!r}: {exc}") from exc


_TYPE_BY_NAME = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}


def _field_types(cls) -> dict[str, type]:
    out = {}
    for f in dataclasses.fields(cls):
        t = f.type if isinstance(f.type, type) else _TYPE_BY_NAME.get(str(f.type).strip(), str)
        out[f.name] = t
    return out


_SECTIONS = {"scene": SceneConfig, "trainer": TrainerConfig, "detector": DetectorConfig}


def run_config_from_dict(values: dict[str, str]) -> RunConfig:
    """Build a RunConfig from dotted key/value strings."""
    top_types = _field_types(RunConfig)
    section_values: dict[str, dict] = {name: {} for name in _SECTIONS}
    top_values: dict[str, object] = {}
    for key, raw in values.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise InvalidConfigError(f"unknown config section {section!r}")
            types = _field_types(_SECTIONS[section])
            if name not in types:
                raise InvalidConfigError(f"unknown config key {key!r}")
            section_values[section][name] = _coerce(raw, types[name], key)
        else:
            if key not in top_types or key in _SECTIONS:
                raise InvalidConfigError(f"unknown config key {key!r}")
            top_values[key] = _coerce(raw, top_types[key], key)
    return RunConfig(
        **top_values,
        scene=SceneConfig(**section_values["scene"]),
        trainer=TrainerConfig(**section_values["trainer"]),
        detector=DetectorConfig(**section_values["detector"]),
    )


def load_run_config(path) -> RunConfig:
    """Read a key/value config file into a RunConfig."""
    return run_config_from_dict(parse_kv_file(path))
