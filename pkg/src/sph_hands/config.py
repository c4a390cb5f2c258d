"""Plain ``key = value`` config files shared by the hand-set, synth, and train commands.

Blank lines and ``#`` comments are ignored. Values stay strings; typed
accessors convert on demand.
"""
from __future__ import annotations

from typing import Dict, Optional, Tuple


class ConfigError(ValueError):
    pass


def parse_kv(text: str, source: str = "<string>") -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def read_kv(path: str) -> Dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_kv(fh.read(), source=path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def dump_kv(values: Dict[str, object]) -> str:
    lines = []
    for key, value in values.items():
        if isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def int_list(value: str) -> Tuple[int, ...]:
    tokens = [t for t in value.replace(",", " ").split() if t]
    try:
        return tuple(int(t) for t in tokens)
    except ValueError:
        raise ConfigError(f"expected a list of integers, got {value!r}") from None


def float_list(value: str) -> Tuple[float, ...]:
    tokens = [t for t in value.replace(",", " ").split() if t]
    try:
        return tuple(float(t) for t in tokens)
    except ValueError:
        raise ConfigError(f"expected a list of numbers, got {value!r}") from None


def get_bool(cfg: Dict[str, str], key: str, default: bool) -> bool:
    if key not in cfg:
        return default
    value = cfg[key].lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {cfg[key]!r}")


def get_opt_int(cfg: Dict[str, str], key: str, default: Optional[int]) -> Optional[int]:
    if key not in cfg or cfg[key].lower() in ("", "none"):
        return default
    try:
        return int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {cfg[key]!r}") from None
