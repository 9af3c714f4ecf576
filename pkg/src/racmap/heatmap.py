"""Portable exports of intensity surfaces: CSV grids and ASCII PGM images."""

from __future__ import annotations

import csv

import numpy as np

from .errors import InvalidInputError


def grid_to_csv(matrix: np.ndarray, path) -> None:
    """Write a matrix as CSV rows; undefined (NaN) entries become empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in np.asarray(matrix, dtype=float):
            w.writerow(["" if not np.isfinite(v) else repr(float(v))
                        for v in row])


def grid_from_csv(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for line in csv.reader(fh):
            rows.append([float("nan") if v == "" else float(v) for v in line])
    return np.asarray(rows, dtype=float)


def grid_to_pgm(matrix: np.ndarray, path, max_gray: int = 255) -> None:
    """Write a matrix as a plain-text (P2) PGM grayscale image.

    Values are scaled linearly between the finite minimum and maximum;
    undefined entries render as 0 (black).
    """
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise InvalidInputError("PGM export needs a 2-D matrix")
    finite = np.isfinite(m)
    if finite.any():
        lo = float(m[finite].min())
        hi = float(m[finite].max())
        span = hi - lo
        scaled = np.zeros_like(m)
        if span > 0:
            scaled[finite] = (m[finite] - lo) / span * max_gray
        else:
            scaled[finite] = max_gray / 2.0
    else:
        scaled = np.zeros_like(m)
    pixels = np.rint(np.where(finite, scaled, 0.0)).astype(int)
    height, width = m.shape
    with open(path, "w") as fh:
        fh.write(f"P2\n{width} {height}\n{max_gray}\n")
        for row in pixels:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def grid_from_pgm(path) -> np.ndarray:
    with open(path) as fh:
        tokens = fh.read().split()
    if tokens[0] != "P2":
        raise InvalidInputError(f"{path} is not a plain PGM (P2) file")
    width, height, _maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    vals = np.array(tokens[4:4 + width * height], dtype=int)
    return vals.reshape(height, width)
