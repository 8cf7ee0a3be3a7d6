"""Deterministic JSON output and the shipped report schema."""

from __future__ import annotations

import json
import math
from importlib import resources
from typing import Any

import numpy as np


def clean_json(obj: Any) -> Any:
    """Recursively convert numpy scalars/arrays and map non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean_json(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj: Any) -> str:
    """Sorted, indented JSON with a trailing newline; NaN/inf become null."""
    return json.dumps(clean_json(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def report_schema() -> dict:
    """The JSON schema every CLI report conforms to."""
    text = resources.files("discreteglr").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)
