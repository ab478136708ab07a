"""``key = value`` configuration files."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Any, TypeVar

T = TypeVar("T")


def read_key_values(path: Path) -> dict[str, str]:
    """Parse UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _coerce(value: str, current: Any) -> Any:
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def apply_overrides(obj: T, values: dict[str, str], *, strict: bool = False) -> T:
    """Return a copy of dataclass ``obj`` with matching keys replaced.

    Unknown keys are ignored unless ``strict``.
    """
    names = {f.name for f in dataclasses.fields(obj)}
    changes = {}
    for key, value in values.items():
        if key in names:
            changes[key] = _coerce(value, getattr(obj, key))
        elif strict:
            raise ValueError(f"unknown config key {key!r} for {type(obj).__name__}")
    return dataclasses.replace(obj, **changes)
