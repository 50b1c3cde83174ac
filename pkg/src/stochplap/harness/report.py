"""Report persistence and validation against the packaged JSON schema."""
from __future__ import annotations

import json
import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

__all__ = ["report_schema", "validate_report", "to_json", "write_report"]


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files(__package__).joinpath("report.schema.json").read_text()
    return json.loads(text)


def _plain(obj):
    """Recursively convert numpy values; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def validate_report(report: dict) -> dict:
    """Return the JSON-ready report; raises ``jsonschema.ValidationError``."""
    plain = _plain(report)
    jsonschema.validate(plain, report_schema())
    return plain


def to_json(report: dict) -> str:
    return json.dumps(validate_report(report), indent=2, sort_keys=True)


def write_report(report: dict, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(report) + "\n")
    return path
