"""Self-describing CSV and JSON files.

Every CSV written here starts with ``#`` comment lines naming the package
version and the hash of the run configuration, followed by an ordinary
header row. Readers skip the comment block.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import pandas as pd

from ._version import __version__
from .domain import IngestionError

HEADER_PREFIX = "# "


def header_lines(kind, config_hash="", extra=None):
    items = {"artifact": "nosmodel", "version": __version__, "kind": kind, "config_sha256": config_hash}
    items.update(extra or {})
    return [f"{HEADER_PREFIX}{k}: {v}" for k, v in items.items()]


def write_csv(frame, path, kind, config_hash="", extra=None):
    """Write ``frame`` with a comment header; floats keep full precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    body = frame.to_csv(index=False, lineterminator="\n")
    text = "\n".join(header_lines(kind, config_hash, extra)) + "\n" + body
    path.write_text(text)
    return path


def _split_header(text):
    meta, body = {}, []
    lines = text.splitlines(keepends=True)
    i = 0
    while i < len(lines) and lines[i].startswith("#"):
        key, _, value = lines[i][1:].strip().partition(":")
        meta[key.strip()] = value.strip()
        i += 1
    body = "".join(lines[i:])
    return meta, body


def read_header(path):
    meta, _ = _split_header(Path(path).read_text())
    return meta


def read_csv(path, **kwargs):
    """Read a CSV that may carry a comment header; returns ``(frame, meta)``."""
    text = Path(path).read_text()
    meta, body = _split_header(text)
    if not body.strip():
        raise IngestionError([(None, f"{path} contains no table")])
    kwargs.setdefault("float_precision", "round_trip")
    return pd.read_csv(io.StringIO(body), **kwargs), meta


def read_observations(path):
    """Observation table from ``path``; an empty file is an ingestion error."""
    path = Path(path)
    if not path.exists():
        raise IngestionError([(None, f"data file {path} does not exist")])
    frame, _ = read_csv(path, dtype={"population": str, "pma_series_id": str, "source_type": str})
    if frame.empty:
        raise IngestionError([(None, f"{path} has a header but no observations")])
    return frame


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj, path, kind, config_hash=""):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"artifact": "nosmodel", "version": __version__, "kind": kind, "config_sha256": config_hash}
    payload.update(_jsonable(obj))
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")
    return path


def read_json(path):
    return json.loads(Path(path).read_text())
