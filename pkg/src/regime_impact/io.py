"""Atomic file output and number formatting shared by the writers."""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


def fmt(x) -> str:
    return format(float(x), ".17g")


def strided(n_rows: int, stride: int):
    """Row indices 0, stride, 2*stride, ... always including the last row."""
    idx = list(range(0, n_rows, max(1, stride)))
    if idx[-1] != n_rows - 1:
        idx.append(n_rows - 1)
    return idx


@contextmanager
def atomic_writer(path):
    """Write to a temp file beside ``path`` and rename over it on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, payload) -> None:
    with atomic_writer(path) as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
