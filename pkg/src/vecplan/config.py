"""Run configuration: presets, file overrides and the resolved echo."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .codebook import VQVAEConfig
from .data import SynthParams
from .generator import GenConfig

PRESETS = ("desk", "paper")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    n_plans: int = 1000
    augment: bool = False
    room_count_range: tuple = (3, 8)
    boundary_notches: int = 2
    min_room_extent: int = 4
    door_width: int = 3

    def synth_params(self, seed: int) -> SynthParams:
        return SynthParams(tuple(self.room_count_range), self.boundary_notches, self.min_room_extent, seed, self.door_width)


@dataclass
class MetricConfig:
    min_shared: float = 2.0


@dataclass
class RunConfig:
    preset: str = "desk"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    layout: VQVAEConfig = field(default_factory=lambda: VQVAEConfig(level="layout"))
    polygon: VQVAEConfig = field(default_factory=lambda: VQVAEConfig(level="polygon"))
    generator: GenConfig = field(default_factory=GenConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    n_samples: int = 1
    # soft wall-clock budget per training command, seconds; 0 disables the warning
    time_budget: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"]["room_count_range"] = list(self.data.room_count_range)
        return d


_SMALL = dict(d_model=64, d_ff=128, layers=2, heads=4)


def preset(name: str) -> RunConfig:
    if name == "paper":
        return RunConfig(
            preset="paper",
            data=DataConfig(n_plans=81235, augment=True),
            layout=VQVAEConfig(level="layout"),
            polygon=VQVAEConfig(level="polygon", codebook_size=5000),
            generator=GenConfig(),
        )
    if name == "desk":
        return RunConfig(
            preset="desk",
            data=DataConfig(n_plans=1000, augment=False),
            layout=VQVAEConfig(level="layout", codebook_size=128, batch_size=16, epochs=200, **_SMALL),
            polygon=VQVAEConfig(level="polygon", codebook_size=128, batch_size=64, epochs=200, **_SMALL),
            generator=GenConfig(batch_size=16, epochs=400, **_SMALL),
            time_budget=15 * 60,
        )
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


# named override sets for the ablation studies; each entry is (label, overrides)
ABLATIONS = {
    "type_encoding": [(v, {"polygon": {"type_encoding": v}}) for v in ("I", "II", "III", "IV")],
    "mask_range": [
        (f"{lo:.0%}-{hi:.0%}", {"layout": {"mask_lo": lo, "mask_hi": hi}, "polygon": {"mask_lo": lo, "mask_hi": hi}})
        for lo, hi in ((0.1, 0.9), (0.2, 0.8), (0.3, 0.7), (0.4, 0.6))
    ],
    "codebook_size": [(str(k), {"layout": {"codebook_size": k}, "polygon": {"codebook_size": k}}) for k in (64, 128, 256)],
    "bits": [
        (f"{b}-bit", {"layout": {"bits": b}, "polygon": {"bits": b}, "generator": {"bits": b}}) for b in (5, 6, 7)
    ],
}


def _merge(obj, overrides: dict, path: str):
    if not isinstance(overrides, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    known = {f.name: f for f in fields(obj)}
    kwargs = {}
    for key, val in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {path + key!r}")
        cur = getattr(obj, key)
        if hasattr(cur, "__dataclass_fields__"):
            kwargs[key] = _merge(cur, val, f"{path}{key}.")
        elif isinstance(cur, tuple):
            kwargs[key] = tuple(val)
        else:
            kwargs[key] = val
    try:
        out = copy.deepcopy(obj)
        for k, v in kwargs.items():
            setattr(out, k, v)
        if hasattr(out, "__post_init__"):
            out.__post_init__()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc
    return out


def resolve(preset_name: str | None = None, path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Preset defaults, then the config file, then explicit overrides (e.g. CLI flags)."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must contain a mapping")
    name = preset_name or raw.get("preset", "desk")
    cfg = _merge(preset(name), {**raw, "preset": name}, "")
    if overrides:
        cfg = _merge(cfg, overrides, "")
    if cfg.layout.level != "layout" or cfg.polygon.level != "polygon":
        raise ConfigError("layout/polygon sections must keep their level")
    if cfg.generator.bits != cfg.polygon.bits:
        raise ConfigError("generator.bits must equal polygon.bits")
    return cfg


def echo(cfg: RunConfig, out_dir: str | Path) -> Path:
    out = Path(out_dir) / "config.resolved.yaml"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return out
