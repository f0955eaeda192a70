"""Run configuration and its flat ``section.key=value`` text form.

Example file::

    preset=C4_pos_and_speed
    episodes=2000
    seeds=0,1,2
    reservoir.n_hidden=1020
    readout.alpha=2e-5

Every field of every section is written when a config is saved, so a
saved manifest can be fed straight back to ``train --config``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .encoding import CodecConfig
from .env import PRESETS, EnvConfig, get_preset
from .readout import ReadoutConfig
from .snn import ReservoirConfig

SECTIONS = {
    "env": EnvConfig,
    "codec": CodecConfig,
    "reservoir": ReservoirConfig,
    "readout": ReadoutConfig,
}

DEFAULT_OUTPUT_ENV = "NEUROHOCKEY_OUT"
DERIVED_PREFIX = "derived."


class ConfigError(ValueError):
    pass


def default_output_root() -> str:
    return os.environ.get(DEFAULT_OUTPUT_ENV, "runs")


@dataclass(frozen=True)
class RunConfig:
    preset: str = "C4_pos_and_speed"
    episodes: int = 2000
    seeds: tuple[int, ...] = tuple(range(10))
    snapshot_interval: int = 500
    output_dir: str = ""
    workers: int = 1
    frozen_eval: bool = False
    centering_rate: float = 1e-3
    env: EnvConfig = field(default_factory=EnvConfig)
    codec: CodecConfig = field(default_factory=CodecConfig)
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)
    readout: ReadoutConfig = field(default_factory=ReadoutConfig)

    @property
    def max_steps(self) -> int:
        return self.env.max_steps

    def validate(self) -> "RunConfig":
        get_preset(self.preset)
        if self.episodes < 1:
            raise ConfigError(f"episodes={self.episodes} must be >= 1")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {list(self.seeds)}")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.snapshot_interval < 0:
            raise ConfigError("snapshot_interval must be >= 0 (0 disables periodic snapshots)")
        if not 0.0 <= self.centering_rate <= 1.0:
            raise ConfigError("centering_rate must be in [0, 1] (0 feeds raw traces to the readout)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.env.max_steps < 1:
            raise ConfigError("env.max_steps must be >= 1")
        try:
            self.reservoir.validate()
            self.readout.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, current, key: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(s) for s in raw.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None
    return raw


def to_flat(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in SECTIONS:
            for sf in fields(value):
                out[f"{f.name}.{sf.name}"] = _format(getattr(value, sf.name))
        else:
            out[f.name] = _format(value)
    return out


def apply_overrides(cfg: RunConfig, overrides: dict[str, str]) -> RunConfig:
    """Return ``cfg`` with dotted keys replaced; unknown keys raise :class:`ConfigError`."""
    top: dict = {}
    nested: dict[str, dict] = {}
    for key, raw in overrides.items():
        key = key.strip()
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown config section {section!r} in {key!r}")
            sub = getattr(cfg, section)
            if name not in {f.name for f in fields(sub)}:
                raise ConfigError(f"unknown config key {key!r}")
            nested.setdefault(section, {})[name] = _parse(raw, getattr(sub, name), key)
        else:
            if key in SECTIONS or key not in {f.name for f in fields(cfg)}:
                raise ConfigError(f"unknown config key {key!r}")
            top[key] = _parse(raw, getattr(cfg, key), key)
    for section, vals in nested.items():
        top[section] = replace(getattr(cfg, section), **vals)
    return replace(cfg, **top)


def parse_lines(lines) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path) as fh:
        pairs = parse_lines(fh)
    pairs = {k: v for k, v in pairs.items() if not k.startswith(DERIVED_PREFIX)}
    return apply_overrides(base or RunConfig(), pairs)


def dump_config(cfg: RunConfig, extra: dict | None = None) -> str:
    flat = to_flat(cfg)
    lines = [f"{k}={v}" for k, v in flat.items()]
    if extra:
        lines.append("# derived values, informational only; skipped when loading")
        lines += [f"{DERIVED_PREFIX}{k}={_format(v)}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path, extra: dict | None = None) -> None:
    Path(path).write_text(dump_config(cfg, extra))


def preset_names() -> list[str]:
    return list(PRESETS)


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
