"""Flat key=value configuration files and deterministic decimal serialization.

Format: one ``key=value`` pair per line, ``#`` starts a comment, blank lines
ignored. Floats are always written with 17 significant digits so that a
save/load round trip is bit-stable.
"""

from __future__ import annotations

from pathlib import Path

from .errors import FileFormatError

__all__ = ["format_float", "parse_config", "read_config", "write_config"]


def format_float(x: float) -> str:
    """Serialize a float with 17 significant digits (round-trip exact)."""
    return format(float(x), ".17g")


def parse_config(text: str) -> dict[str, str]:
    """Parse key=value text into an ordered dict of raw string values."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FileFormatError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise FileFormatError(f"config line {lineno}: empty key")
        out[key] = value.strip()
    return out


def read_config(path: str | Path) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def write_config(path: str | Path, items: dict[str, object], header: str | None = None) -> None:
    """Write key=value pairs in the given order; floats at 17 significant digits."""
    lines = []
    if header:
        lines.extend(f"# {h}" for h in header.splitlines())
    for key, value in items.items():
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = format_float(value)
        else:
            text = str(value)
        lines.append(f"{key}={text}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
