"""Run configuration: flat ``key = value`` files, environment overrides, CLI overrides."""
from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

from .training import TrainConfig

ENV_PREFIX = "WGE_"
PATH_KEYS = ("dataset_dir", "out_dir")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset_dir: str = ""
    out_dir: str = "runs/default"
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def keys(cls) -> list[str]:
        return list(PATH_KEYS) + TrainConfig.field_names()

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)}" for k in PATH_KEYS]
        lines += [f"{k} = {_format(v)}" for k, v in self.train.to_dict().items()]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


_TRAIN_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key: str, raw) -> object:
    if key in PATH_KEYS:
        return str(raw)
    kind = _TRAIN_TYPES[key]
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    try:
        if kind in ("bool", bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind in ("int", int):
            return int(text)
        if kind in ("float", float):
            return float(text)
    except ValueError:
        raise ConfigError(f"invalid value for {key}: {raw!r}") from None
    return text


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if name.startswith(ENV_PREFIX):
            out[name[len(ENV_PREFIX):].lower()] = value
    return out


def resolve(config_path: str | Path | None = None, overrides: Mapping[str, object] | None = None,
            environ: Mapping[str, str] | None = None) -> RunConfig:
    """Defaults, then the config file, then ``WGE_*`` variables, then explicit overrides.

    Unknown keys are rejected at every layer and the result is validated before
    it is returned.
    """
    values: dict[str, object] = {}
    layers = []
    if config_path is not None:
        path = Path(config_path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        layers.append((str(path), parse_config_text(path.read_text(encoding="utf-8"), str(path))))
    layers.append(("environment", env_overrides(environ)))
    layers.append(("command line", {k: v for k, v in (overrides or {}).items() if v is not None}))
    known = set(RunConfig.keys())
    for source, layer in layers:
        unknown = sorted(set(layer) - known)
        if unknown:
            raise ConfigError(f"unknown config keys from {source}: {', '.join(unknown)}")
        for key, raw in layer.items():
            values[key] = _coerce(key, raw)
    train_kw = {k: v for k, v in values.items() if k not in PATH_KEYS}
    try:
        train = TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    run = RunConfig(train=train)
    for key in PATH_KEYS:
        if key in values:
            setattr(run, key, values[key])
    return run
