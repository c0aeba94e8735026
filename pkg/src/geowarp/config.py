"""Flat ``key = value`` configuration files.

``key: value`` is accepted as well. Blank lines and lines starting with ``#`` are ignored; keys are
case-sensitive; values are returned as stripped strings.
"""

from __future__ import annotations

__all__ = ["ConfigError", "read_config", "parse_config", "write_config", "format_value"]


class ConfigError(ValueError):
    pass


def parse_config(text: str, source: str = "<string>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value' or 'key: value', got {line!r}")
        out[key] = value.strip()
    return out


def read_config(path) -> dict[str, str]:
    with open(path) as fh:
        return parse_config(fh.read(), str(path))


def format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def write_config(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {format_value(value)}\n")
