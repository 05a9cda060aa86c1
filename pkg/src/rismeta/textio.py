"""Plain-text matrix serialization.

One file holds any number of named complex matrices::

    # rismeta-matrix v1
    H 2 3
    1.0,0.0 0.5,-0.25 0.0,1.0
    ...

Each block starts with ``name rows cols``; then ``rows`` lines follow, each
with ``cols`` space-separated ``re,im`` pairs. Floats are written with
``repr`` so a read-back is bit-exact. Real arrays are stored with zero
imaginary parts and 1-D arrays as a single row.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

HEADER = "# rismeta-matrix v1"


def dumps(matrices: dict[str, np.ndarray]) -> str:
    out = io.StringIO()
    out.write(HEADER + "\n")
    for name, arr in matrices.items():
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"bad matrix name {name!r}")
        a = np.atleast_2d(np.asarray(arr))
        if a.ndim != 2:
            raise ValueError(f"{name}: only 1-D/2-D arrays are supported")
        a = a.astype(complex)
        out.write(f"{name} {a.shape[0]} {a.shape[1]}\n")
        for row in a:
            out.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row))
            out.write("\n")
    return out.getvalue()


def loads(text: str) -> dict[str, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    result: dict[str, np.ndarray] = {}
    i = 0
    while i < len(lines):
        try:
            name, r, c = lines[i].split()
            rows, cols = int(r), int(c)
        except ValueError as exc:
            raise ValueError(f"malformed block header: {lines[i]!r}") from exc
        a = np.empty((rows, cols), dtype=complex)
        for j in range(rows):
            pairs = lines[i + 1 + j].split()
            if len(pairs) != cols:
                raise ValueError(f"{name}: row {j} has {len(pairs)} entries, expected {cols}")
            for k, p in enumerate(pairs):
                re, im = p.split(",")
                a[j, k] = complex(float(re), float(im))
        result[name] = a
        i += 1 + rows
    return result


def save(path: str | Path, matrices: dict[str, np.ndarray]) -> None:
    path = Path(path)
    try:
        path.write_text(dumps(matrices))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load(path: str | Path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_text())
