"""CSV and JSON persistence.

Every CSV starts with ``#``-prefixed ``key = value`` metadata lines followed
by a plain header row.  Floats are written with ``repr`` (shortest
round-trip decimal) so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "fmt",
    "write_csv",
    "read_csv",
    "write_json",
    "write_eigenvalues",
    "write_histogram",
    "write_density",
    "write_mrm_samples",
    "write_returns",
    "read_returns",
]


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, columns: Sequence[str], rows: Iterable[Sequence], meta: Mapping | None = None) -> Path:
    path = Path(path)
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k} = {fmt(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    path.write_text(buf.getvalue())
    return path


def read_csv(path) -> tuple[dict, dict]:
    """Return ``(meta, columns)`` with each column as a float array."""
    meta, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            lines.append(line)
    rows = list(csv.reader(lines))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return meta, {name: data[:, j] for j, name in enumerate(header)}


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_eigenvalues(path, spectra: Sequence[np.ndarray], meta=None) -> Path:
    rows = ((k, lam) for k, s in enumerate(spectra) for lam in s)
    return write_csv(path, ["sample_id", "eigenvalue"], rows, meta)


def write_histogram(path, hist, meta=None) -> Path:
    rows = zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.probabilities)
    return write_csv(path, ["bin_left", "bin_right", "probability"], rows, meta)


def write_density(path, curve, column: str, meta=None) -> Path:
    rows = zip(curve.x_points, curve.values)
    return write_csv(path, [column, "density"], rows, meta)


def write_mrm_samples(path, masses: np.ndarray, meta=None) -> Path:
    """Long format: ``(sample_id, cell, mass)``."""
    masses = np.atleast_2d(masses)
    rows = ((k, j, m) for k in range(masses.shape[0]) for j, m in enumerate(masses[k]))
    return write_csv(path, ["sample_id", "cell", "mass"], rows, meta)


def write_returns(path, entries: np.ndarray, meta=None) -> Path:
    """One CSV row per process ``i``, columns ``r_1 .. r_T``."""
    entries = np.atleast_2d(entries)
    cols = [f"r_{j + 1}" for j in range(entries.shape[1])]
    return write_csv(path, cols, entries.tolist(), meta)


def read_returns(path) -> np.ndarray:
    _, cols = read_csv(path)
    return np.column_stack(list(cols.values()))
