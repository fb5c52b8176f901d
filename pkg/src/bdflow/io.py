"""Deterministic JSON and CSV writers that stamp every file with the
package version and the hash of the originating configuration."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import __version__


def stamp(config_hash: str) -> str:
    return f"bdflow {__version__} config_hash={config_hash}"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, doc: dict, config_hash: str) -> Path:
    out = dict(_clean(doc))
    out["version"] = __version__
    out["config_hash"] = config_hash
    path = Path(path)
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path, header, rows, config_hash: str) -> Path:
    """Header row after a single ``#`` provenance line; floats in round-trip form."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# {stamp(config_hash)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) for x in row])
    return path
