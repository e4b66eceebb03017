"""Flat key/value config files (TOML) and reproducibility metadata."""
from __future__ import annotations

import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .simulator import ClusterConfig


def load_flat(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    for k, v in data.items():
        if isinstance(v, dict):
            raise ValueError(f"{path}: config must be flat, key {k!r} is a table")
    return data


def load_cluster_config(path=None, **overrides) -> ClusterConfig:
    d = load_flat(path) if path else {}
    d.update({k: v for k, v in overrides.items() if v is not None})
    return ClusterConfig.from_flat_dict(d)


def dump_flat(d: dict) -> str:
    """Serialise a flat dict of scalars as TOML."""
    lines = []
    for k in sorted(d):
        v = d[k]
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, (int, float)):
            s = repr(v) if v == v and abs(v) != float("inf") else ("nan" if v != v else ("inf" if v > 0 else "-inf"))
        else:
            s = json.dumps(str(v))
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + "\n"


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
