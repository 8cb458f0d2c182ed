"""Loading helpers for the declarative YAML documents (arm model, scene)."""
from __future__ import annotations

from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Config document is malformed; the message carries the offending key path."""


def load_document(path: str | Path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_document(raw, str(path))


def parse_document(text: str, origin: str = "<string>") -> dict:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{origin}: top level must be a mapping")
    return doc


def require(mapping: dict, key: str, kind: type, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}.{key}: missing")
    value = mapping[key]
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind) or (kind is not bool and isinstance(value, bool)):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value
