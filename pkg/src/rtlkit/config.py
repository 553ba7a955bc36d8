"""Run configuration: canonical serialization, hashing, and section builders.

A run config is a plain JSON document with sections (train, encoder, pda,
sampling, toy).  Hashing uses a canonical serialization (sorted keys,
compact separators) so semantically identical documents hash identically
regardless of key order.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError

DEFAULT_RUN_CONFIG = {
    "train": {},
    "encoder": {},
    "pda": {},
    "sampling": {},
    "toy": {},
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj) -> str:
    """Stable 16-hex-digit digest of a JSON-serializable config."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def merge_configs(base: dict, override: dict) -> dict:
    """Recursive dict merge; override wins on leaves."""
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = merge_configs(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults <- file <- overrides, with basic shape validation."""
    doc = {k: dict(v) for k, v in DEFAULT_RUN_CONFIG.items()}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {p} must hold a JSON object")
        doc = merge_configs(doc, loaded)
    if overrides:
        doc = merge_configs(doc, overrides)
    return doc


def build_section(cls, doc: dict, section: str, transform=None):
    """Construct a config dataclass from a section dict; errors name the field path."""
    raw = dict(doc.get(section, {}))
    if transform:
        raw = transform(raw)
    try:
        return cls(**raw)
    except TypeError as exc:
        # surface the offending key as a dotted path
        message = str(exc)
        for key in raw:
            if key in message:
                raise ConfigError(f"{section}.{key}: {message}") from None
        raise ConfigError(f"{section}: {message}") from None
    except ConfigError as exc:
        raise ConfigError(f"{section}: {exc}") from None
