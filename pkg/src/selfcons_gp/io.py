"""Deterministic CSV / JSON writers for experiment outputs."""

from __future__ import annotations

import csv
import json
import math
import os
from importlib import metadata

import numpy as np


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        from . import __version__

        return __version__


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if v is None:
        return ""
    return str(v)


def write_csv(path: str, rows: list[dict], columns: list[str], config_hash: str) -> int:
    """Write rows with a ``#`` provenance header; returns the row count.

    Floats are written with ``repr`` so identical inputs give identical bytes.
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash} version={code_version()}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    return len(rows)


def read_csv(path: str) -> tuple[dict, list[dict]]:
    """Return ``(header_fields, rows)``; values stay as strings."""
    with open(path, newline="") as fh:
        first = fh.readline()
        header = {}
        if first.startswith("#"):
            for tok in first[1:].split():
                k, _, v = tok.partition("=")
                header[k] = v
        else:
            fh.seek(0)
        rows = list(csv.DictReader(fh))
    return header, rows


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_json(path: str, obj) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default, allow_nan=True)
        fh.write("\n")


def read_json(path: str):
    with open(path) as fh:
        return json.load(fh)
