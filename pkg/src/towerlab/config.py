"""TOML loading and small output helpers shared by the CLI and the run modules."""

from __future__ import annotations

import csv
import hashlib
import json
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def fmt(x) -> str:
    """Stable text form for CSV cells (repr of floats round-trips exactly)."""
    if x is None:
        return "n/a"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    try:
        import numpy as np

        if isinstance(x, np.floating):
            return repr(float(x))
        if isinstance(x, np.integer):
            return str(int(x))
        if isinstance(x, np.bool_):
            return "true" if bool(x) else "false"
    except ImportError:  # pragma: no cover
        pass
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()
