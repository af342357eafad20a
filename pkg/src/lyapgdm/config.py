"""Run configuration: a flat key=value document with [env]/[trainer]/[diffusion]/[experiment] sections.

Missing keys fall back to the case-study defaults, unknown keys are rejected
by name, CLI dotted-key overrides (`--env.bandwidth 2e6`) are applied after
the file, and the merged result is validated before any run starts.
parse_config(serialize_config(cfg)) round-trips exactly.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .diffusion import DiffusionConfig
from .env import ConfigError, EnvConfig
from .trainer import POLICY_KINDS, TrainerConfig

__all__ = ["ExperimentConfig", "RunConfig", "parse_config", "serialize_config"]


@dataclass
class ExperimentConfig:
    agent: str = "gdm-ddpg"
    out_dir: str = "out"
    eval_episodes: int = 20
    checkpoint_every: int = 100
    sweep_param: str = "env.bandwidth"
    sweep_values: tuple[float, ...] = ()
    sweep_mode: str = "eval"

    def validate(self) -> None:
        if self.agent not in POLICY_KINDS:
            raise ConfigError(
                f"experiment.agent must be one of {POLICY_KINDS}, got {self.agent!r}"
            )
        if self.eval_episodes < 1:
            raise ConfigError(
                f"experiment.eval_episodes must be >= 1, got {self.eval_episodes}"
            )
        if self.checkpoint_every < 1:
            raise ConfigError(
                f"experiment.checkpoint_every must be >= 1, got {self.checkpoint_every}"
            )
        if self.sweep_mode not in ("eval", "train"):
            raise ConfigError(
                f"experiment.sweep_mode must be eval or train, got {self.sweep_mode!r}"
            )


@dataclass
class RunConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> None:
        self.env.validate()
        self.trainer.validate()
        self.diffusion.validate()
        self.experiment.validate()


_SECTIONS = {
    "env": EnvConfig,
    "trainer": TrainerConfig,
    "diffusion": DiffusionConfig,
    "experiment": ExperimentConfig,
}

# Keys whose values are tuples of points or plain numeric tuples.
_POINT_KEYS = {("env", "start"), ("env", "dest")}
_POINT_LIST_KEYS = {("env", "device_positions")}
_FLOAT_TUPLE_KEYS = {("experiment", "sweep_values")}


def _parse_point(text: str, key: str) -> tuple[float, float]:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError(f"{key}: expected 'x,y', got {text!r}")
    return (float(parts[0]), float(parts[1]))


def _parse_point_list(text: str, key: str) -> tuple[tuple[float, float], ...]:
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        points.append(_parse_point(chunk, key))
    if not points:
        raise ConfigError(f"{key}: expected 'x1,y1; x2,y2; ...', got {text!r}")
    return tuple(points)


def _parse_value(section: str, key: str, text: str, default):
    full = f"{section}.{key}"
    text = text.strip()
    try:
        if (section, key) in _POINT_KEYS:
            return _parse_point(text, full)
        if (section, key) in _POINT_LIST_KEYS:
            return _parse_point_list(text, full)
        if (section, key) in _FLOAT_TUPLE_KEYS:
            return tuple(float(p) for p in text.split(",") if p.strip())
        if isinstance(default, bool):
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ConfigError(f"{full}: expected a boolean, got {text!r}")
        if isinstance(default, int):
            as_float = float(text)
            as_int = int(as_float)
            if as_int != as_float:
                raise ConfigError(f"{full}: expected an integer, got {text!r}")
            return as_int
        if isinstance(default, float):
            return float(text)
        return text
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(f"{full}: cannot parse {text!r} ({e})") from e


def _format_value(section: str, key: str, value) -> str:
    if (section, key) in _POINT_KEYS:
        return f"{value[0]!r}, {value[1]!r}"
    if (section, key) in _POINT_LIST_KEYS:
        return "; ".join(f"{p[0]!r}, {p[1]!r}" for p in value)
    if (section, key) in _FLOAT_TUPLE_KEYS:
        return ", ".join(repr(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config(source: str | Path | None = None,
                 overrides: dict[str, str] | None = None) -> RunConfig:
    """Build a validated RunConfig from a file path or config text.

    `source` may be None (pure defaults), a path to a config file, or the
    config text itself.  `overrides` maps dotted keys to unparsed values and
    wins over the file.
    """
    cfg = RunConfig()
    entries: dict[tuple[str, str], str] = {}

    if source is not None:
        if isinstance(source, Path) or (
            isinstance(source, str) and "=" not in source and "\n" not in source
        ):
            text = Path(source).read_text()
        else:
            text = str(source)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"config syntax error: {e}") from e
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                entries[(section, key)] = value

    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} is not of the form section.key")
        entries[(section, key)] = value

    for (section, key), text in entries.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config key {section}.{key}")
        target = getattr(cfg, section)
        known = {f.name for f in dataclasses.fields(target)}
        if key not in known:
            raise ConfigError(f"unknown config key {section}.{key}")
        default = getattr(target, key)
        setattr(target, key, _parse_value(section, key, text, default))

    cfg.validate()
    return cfg


def serialize_config(cfg: RunConfig) -> str:
    """Render a RunConfig as config text; parse_config() inverts it exactly."""
    out = io.StringIO()
    for section, cls in _SECTIONS.items():
        out.write(f"[{section}]\n")
        target = getattr(cfg, section)
        for f in dataclasses.fields(cls):
            out.write(f"{f.name} = {_format_value(section, f.name, getattr(target, f.name))}\n")
        out.write("\n")
    return out.getvalue()
