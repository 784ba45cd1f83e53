"""Plain CSV tables with atomic writes and round-trip precision."""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

# 17 significant digits round-trip every double exactly
FLOAT_FORMAT = "{:.17g}"


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and ``os.replace``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_table(header, columns) -> str:
    cols = [np.asarray(c, dtype=float).ravel() for c in columns]
    n = {c.size for c in cols}
    if len(n) != 1:
        raise ValueError(f"columns have different lengths {sorted(n)}")
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(FLOAT_FORMAT.format(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, header, columns) -> None:
    atomic_write_text(path, format_table(header, columns))


def read_csv(path) -> dict:
    """Return ``{column name: float array}``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, len(header))
    return {h: data[:, i] for i, h in enumerate(header)}
