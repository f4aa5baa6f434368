"""Flat ``key=value`` settings files.

Keys are dotted by section (``train.epochs=40``); ``#`` starts a comment and
blank lines are skipped. Values stay strings for pydantic to coerce, except
``none``/``null`` and JSON lists or objects (``guidance.arm_joints.left=[4,5,6]``).
"""

import json
from pathlib import Path
from typing import Any

from loguru import logger
from pydantic import ValidationError

from app.models.configs import Settings
from app.models.errors import ConfigError


def _parse_value(raw: str, where: str) -> Any:
    value = raw.strip()
    if value.lower() in ("none", "null"):
        return None
    if value[:1] in ("[", "{"):
        try:
            return json.loads(value)
        except json.JSONDecodeError as e:
            msg = f"{where}: invalid list or object value '{value}'"
            raise ConfigError(msg) from e
    return value


def parse_line(line: str, where: str) -> tuple[str, Any] | None:
    """One ``key=value`` pair, or None for blank and comment lines."""
    text = line.split("#", 1)[0].strip()
    if not text:
        return None
    key, sep, value = text.partition("=")
    key = key.strip()
    if not sep or not key:
        msg = f"{where}: expected key=value, got '{line.strip()}'"
        raise ConfigError(msg)
    return key, _parse_value(value, where)


def parse_settings(text: str, source: str = "<settings>") -> dict[str, Any]:
    """Flat mapping of dotted keys; later lines win."""
    pairs: dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), 1):
        parsed = parse_line(line, f"{source}, line {number}")
        if parsed is not None:
            pairs[parsed[0]] = parsed[1]
    return pairs


def read_settings(path: Path | str) -> dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        msg = f"cannot read settings file {path}: {e}"
        raise ConfigError(msg) from e
    return parse_settings(text, str(path))


def parse_overrides(items: list[str] | tuple[str, ...]) -> dict[str, Any]:
    """Command-line ``key=value`` arguments."""
    pairs: dict[str, Any] = {}
    for item in items:
        parsed = parse_line(item, "command line")
        if parsed is not None:
            pairs[parsed[0]] = parsed[1]
    return pairs


def nest(pairs: dict[str, Any]) -> dict[str, Any]:
    """Turn dotted keys into nested dictionaries."""
    tree: dict[str, Any] = {}
    for key, value in pairs.items():
        *sections, leaf = key.split(".")
        node = tree
        for section in sections:
            child = node.setdefault(section, {})
            if not isinstance(child, dict):
                msg = f"'{key}' conflicts with the value already set for '{section}'"
                raise ConfigError(msg)
            node = child
        if isinstance(node.get(leaf), dict):
            msg = f"'{key}' would replace the section '{leaf}'"
            raise ConfigError(msg)
        node[leaf] = value
    return tree


def build_settings(
    file_pairs: dict[str, Any] | None = None,
    overrides: dict[str, Any] | None = None,
    *,
    seed: int | None = None,
) -> Settings:
    """Validate file values updated by overrides; ``seed`` replaces every seed."""
    pairs = dict(file_pairs or {}) | dict(overrides or {})
    try:
        settings = Settings.model_validate(nest(pairs))
        if seed is not None:
            settings = settings.with_seed(seed)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in error['loc'])}: {error['msg']}"
            for error in e.errors()
        )
        msg = f"invalid settings: {problems}"
        raise ConfigError(msg) from e
    logger.debug(f"Resolved settings from {len(pairs)} keys")
    return settings


def load_settings(
    path: Path | str | None,
    overrides: list[str] | tuple[str, ...] = (),
    *,
    seed: int | None = None,
) -> Settings:
    """Settings from an optional file plus command-line overrides."""
    file_pairs = read_settings(path) if path is not None else {}
    return build_settings(file_pairs, parse_overrides(overrides), seed=seed)
