"""Run configuration: flat ``key = value`` files overlaid with command-line flags."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .agent import HyperParams
from .errors import InvalidArgument
from .schemes import parse_key_values

OUTPUT_DIR_ENV = "BACKUPSCHED_OUTPUT_DIR"

# config keys that differ from the HyperParams attribute names
_ALIASES = {"lambda": "lam"}


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "runs")


@dataclass
class RunConfig:
    k: int = 3
    out_dir: str = field(default_factory=default_output_dir)
    hp: HyperParams = field(default_factory=HyperParams)

    @property
    def seed(self) -> int:
        return self.hp.seed

    def as_dict(self) -> dict:
        d = {"k": self.k, "out_dir": self.out_dir}
        for key, value in asdict(self.hp).items():
            d["lambda" if key == "lam" else key] = value
        return d


def config_keys() -> list[str]:
    keys = ["k", "out_dir"]
    keys += ["lambda" if f.name == "lam" else f.name for f in fields(HyperParams)]
    return keys


def _parse_number(key: str, text: str, kind: type):
    text = text.strip()
    try:
        if kind is int:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        if "/" in text:
            num, den = text.split("/", 1)
            return float(num) / float(den.strip().strip("()"))
        return float(text)
    except (ValueError, ZeroDivisionError):
        raise InvalidArgument(f"config key {key!r}: cannot parse {text!r} as {kind.__name__}") from None


def apply_settings(cfg: RunConfig, settings: dict[str, str | int | float]) -> RunConfig:
    """Overlay ``settings`` (already-typed values or strings from a file)."""
    types = HyperParams.field_types()
    for key, raw in settings.items():
        if key == "out_dir":
            cfg.out_dir = str(raw)
            continue
        if key == "k":
            cfg.k = raw if isinstance(raw, int) else _parse_number(key, str(raw), int)
            continue
        attr = _ALIASES.get(key, key)
        if attr not in types or key == "lam":
            raise InvalidArgument(f"unknown config key {key!r}; valid keys: {', '.join(config_keys())}")
        kind = types[attr]
        value = raw if isinstance(raw, (int, float)) and not isinstance(raw, bool) else _parse_number(key, str(raw), kind)
        setattr(cfg.hp, attr, kind(value))
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        apply_settings(cfg, parse_key_values(Path(path).read_text()))
    if overrides:
        apply_settings(cfg, overrides)
    if int(cfg.k) != cfg.k or cfg.k < 2:
        raise InvalidArgument(f"k must be an integer >= 2, got {cfg.k!r}")
    cfg.hp.validate()
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = ["# backupsched run configuration"]
    for key, value in cfg.as_dict().items():
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines) + "\n"
