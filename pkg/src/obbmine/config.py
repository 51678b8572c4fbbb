"""TOML configuration: file -> validated dataclasses -> deterministic snapshot.

A config file holds optional sections (``[dataset]``, ``[teacher]``,
``[mining]``, ``[tracker]``, ``[loss]``, ``[pipeline]``); every key falls back
to the dataclass default, and unknown sections or keys are rejected so typos
cannot silently revert a knob to its default.  ``dump_toml`` emits a canonical
snapshot (fixed section order, dataclass field order, ``repr`` floats) so two
identical runs write byte-identical ``config.toml`` files.
"""

from __future__ import annotations

import dataclasses

import tomli

from .dataset import GenConfig
from .errors import DataError, UsageError
from .freezing import TrackerConfig
from .losses import LossConfig
from .mining import MiningConfig
from .pipeline import PipelineConfig
from .surrogate import TeacherConfig

CONFIG_SECTIONS = {
    "dataset": GenConfig,
    "teacher": TeacherConfig,
    "mining": MiningConfig,
    "tracker": TrackerConfig,
    "loss": LossConfig,
    "pipeline": PipelineConfig,
}

# Canonical section order in emitted snapshots; [run] always leads.
_DUMP_ORDER = ("run", "dataset", "teacher", "mining", "tracker", "loss",
               "pipeline")


def read_config_file(path) -> dict:
    """Parse a TOML file into a raw section dict."""
    try:
        with open(path, "rb") as fh:
            return tomli.load(fh)
    except OSError as exc:
        raise DataError(f"{path}: cannot read config ({exc.strerror})") from exc
    except tomli.TOMLDecodeError as exc:
        raise DataError(f"{path}: invalid TOML ({exc})") from exc


def _coerce(section: str, key: str, value, default, where: str):
    """Coerce a TOML value to the type of the dataclass default."""
    ctx = f"{where}: [{section}] {key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise DataError(f"{ctx} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise DataError(f"{ctx} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DataError(f"{ctx} must be a number")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, list) or any(
                isinstance(v, bool) or not isinstance(v, (int, float))
                for v in value):
            raise DataError(f"{ctx} must be an array of numbers")
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise DataError(f"{ctx} must be a string")
        return value
    raise DataError(f"{ctx} is not configurable")


def build_section(section: str, overrides: dict, where: str = "<config>"):
    """Instantiate one section's dataclass with file overrides applied."""
    if section not in CONFIG_SECTIONS:
        raise DataError(f"{where}: unknown config section [{section}]")
    cls = CONFIG_SECTIONS[section]
    defaults = {f.name: f.default if f.default is not dataclasses.MISSING
                else f.default_factory()
                for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in overrides.items():
        if key not in defaults:
            raise DataError(f"{where}: unknown key {key!r} in [{section}]")
        kwargs[key] = _coerce(section, key, value, defaults[key], where)
    try:
        return cls(**kwargs)
    except (UsageError, ValueError) as exc:
        raise DataError(f"{where}: bad [{section}] value: {exc}") from exc


def build_configs(raw: dict, where: str = "<config>") -> dict:
    """Build every section dataclass from a raw TOML dict (defaults where
    absent)."""
    for section, body in raw.items():
        if section not in CONFIG_SECTIONS:
            raise DataError(f"{where}: unknown config section [{section}]")
        if not isinstance(body, dict):
            raise DataError(f"{where}: [{section}] must be a table")
    return {section: build_section(section, raw.get(section, {}), where)
            for section in CONFIG_SECTIONS}


def _fmt_toml(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        text = repr(value)
        return text if ("." in text or "e" in text or "n" in text) else text + ".0"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_fmt_toml(v) for v in value) + "]"
    raise UsageError(f"cannot serialize {type(value).__name__} to TOML")


def dump_toml(sections: dict) -> str:
    """Serialize ``{section: {key: value} | dataclass}`` canonically."""
    known = [s for s in _DUMP_ORDER if s in sections]
    extra = [s for s in sections if s not in _DUMP_ORDER]
    if extra:
        raise UsageError(f"unknown snapshot section {extra[0]!r}")
    lines = []
    for section in known:
        body = sections[section]
        if dataclasses.is_dataclass(body):
            body = {f.name: getattr(body, f.name)
                    for f in dataclasses.fields(body)}
        lines.append(f"[{section}]")
        for key, value in body.items():
            lines.append(f"{key} = {_fmt_toml(value)}")
        lines.append("")
    return "\n".join(lines)
