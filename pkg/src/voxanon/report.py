"""Run report assembly and JSON rendering.

Reports are deterministic documents: stable key order, no timestamps,
and the -inf distinctiveness sentinel rendered as the string "-inf" so
the output stays valid JSON.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

from . import __version__
from .seeding import config_hash


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float):
        if math.isinf(value):
            return "-inf" if value < 0 else "inf"
        if math.isnan(value):
            return "nan"
        return value
    if hasattr(value, "item"):  # numpy scalars
        return _jsonable(value.item())
    return value


def render_report(report: dict) -> str:
    return json.dumps(_jsonable(report), sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_report(report: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(render_report(report), encoding="utf-8")


def base_report(command: str, seed: int, config: dict) -> dict:
    return {
        "tool_version": __version__,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
    }
