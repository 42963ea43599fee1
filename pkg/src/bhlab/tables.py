"""Tabular output: CSV with a header row, or one JSON object per line."""

import csv
import json

import numpy as np


def _plain(v):
    if isinstance(v, (np.integer, int, bool, np.bool_)):
        return int(v)
    return float(v)


def write_table(path, columns, rows, fmt: str = "csv"):
    """``rows`` is an iterable of sequences aligned with ``columns``."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown table format {fmt!r}")
    with open(path, "w", newline="") as fh:
        if fmt == "csv":
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([repr(_plain(v)) if not isinstance(_plain(v), int) else _plain(v) for v in row])
        else:
            for row in rows:
                fh.write(json.dumps(dict(zip(columns, (_plain(v) for v in row)))) + "\n")


def read_table(path) -> dict:
    """CSV columns as float arrays (tests and quick checks)."""
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {name: np.atleast_1d(data[name]) for name in data.dtype.names}
