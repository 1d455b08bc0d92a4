"""Canonical JSON emission shared by genome files, fitness reports and checkpoints.

Output is deterministic: object keys are sorted, floats are rendered with 17
significant digits (enough to round-trip any IEEE double exactly).
"""

from __future__ import annotations

import math
from typing import Any


def format_float(x: float) -> str:
    """Render a float with 17 significant digits."""
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x!r}")
    return format(x, ".17g")


def canonical_json(value: Any) -> str:
    """Serialize nested dicts/lists/scalars to deterministic JSON text."""
    parts: list[str] = []
    _emit(value, parts)
    return "".join(parts)


def _emit(value: Any, parts: list[str]) -> None:
    if isinstance(value, dict):
        parts.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be strings, got {key!r}")
            if i:
                parts.append(",")
            parts.append(f'"{_escape(key)}":')
            _emit(value[key], parts)
        parts.append("}")
    elif isinstance(value, (list, tuple)):
        parts.append("[")
        for i, item in enumerate(value):
            if i:
                parts.append(",")
            _emit(item, parts)
        parts.append("]")
    elif isinstance(value, bool):
        parts.append("true" if value else "false")
    elif isinstance(value, int):
        parts.append(str(value))
    elif isinstance(value, float):
        parts.append(format_float(value))
    elif isinstance(value, str):
        parts.append(f'"{_escape(value)}"')
    elif value is None:
        parts.append("null")
    else:
        raise TypeError(f"cannot serialize {type(value).__name__} to JSON")


def _escape(s: str) -> str:
    out = []
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    return "".join(out)
