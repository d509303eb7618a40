"""Flat key=value text (de)serialization for config dataclasses."""

import dataclasses
import typing

from .errors import ConfigError


def format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_value(text, ftype):
    text = text.strip()
    origin = typing.get_origin(ftype)
    if origin is tuple:
        item = typing.get_args(ftype)[0]
        if text == "":
            return ()
        return tuple(item(v.strip()) for v in text.split(","))
    if ftype is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    return ftype(text)


def parse_kv_text(text):
    """Parse 'key = value' lines; '#' starts a comment; blank lines skipped."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, val = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val.strip()
    return out


def to_text(obj):
    """Canonical text: one 'key=value' line per field, sorted by key."""
    lines = []
    for f in sorted(dataclasses.fields(obj), key=lambda f: f.name):
        lines.append(f"{f.name}={format_value(getattr(obj, f.name))}")
    return "\n".join(lines) + "\n"


def field_types(cls):
    return {f.name: t for f, t in zip(
        dataclasses.fields(cls),
        (typing.get_type_hints(cls)[f.name] for f in dataclasses.fields(cls)),
    )}


def from_mapping(cls, mapping):
    """Build a dataclass from a {key: raw string} mapping; unknown keys fail."""
    types = field_types(cls)
    values = {}
    for key, raw in mapping.items():
        if key not in types:
            known = ", ".join(sorted(types))
            raise ConfigError(f"unknown key {key!r}; known keys: {known}")
        values[key] = parse_value(raw, types[key])
    return cls(**values)


def from_text(cls, text):
    return from_mapping(cls, parse_kv_text(text))


def apply_overrides(obj, mapping):
    """Return a copy of `obj` with raw-string overrides parsed and applied."""
    types = field_types(type(obj))
    updates = {}
    for key, raw in mapping.items():
        if key not in types:
            raise ConfigError(f"unknown key {key!r} for {type(obj).__name__}")
        updates[key] = parse_value(raw, types[key])
    return dataclasses.replace(obj, **updates)
