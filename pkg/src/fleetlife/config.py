"""Key-value configuration files.

Files hold ``key = value`` lines, optionally under ``[section]`` headers.
Values are decoded as JSON when possible (numbers, lists, objects, true/false)
and kept as plain strings otherwise. ``#`` and ``;`` start comments.
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path
from typing import Any

from .exceptions import ParameterError

_DEFAULT_SECTION = "__root__"


def _decode(raw: str) -> Any:
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def read_config(path: str | Path) -> dict[str, Any]:
    """Read a key-value file into a flat dict.

    Keys under a ``[section]`` header are returned as ``"section.key"``;
    keys before any header are returned bare.
    """
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), default_section="__unused__"
    )
    parser.optionxform = str  # keep key case
    try:
        parser.read_string(f"[{_DEFAULT_SECTION}]\n" + text)
    except configparser.Error as exc:
        raise ParameterError(f"{path}: {exc}") from exc
    out: dict[str, Any] = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            name = key if section == _DEFAULT_SECTION else f"{section}.{key}"
            out[name] = _decode(value)
    return out


def nested(flat: dict[str, Any]) -> dict[str, Any]:
    """Group ``"section.key"`` entries into sub-dicts."""
    out: dict[str, Any] = {}
    for key, value in flat.items():
        head, _, tail = key.partition(".")
        if tail:
            out.setdefault(head, {})[tail] = value
        else:
            out[key] = value
    return out
