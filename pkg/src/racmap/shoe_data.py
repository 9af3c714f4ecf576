"""Shoe-sole data model: standardization, binarization, IO and summaries.

A raw print carries landmarks, RAC centers and a contact mask in its own
image coordinates.  Standardization maps everything into a shoe-aligned
frame: origin at the landmark midpoint, major axis vertical, all
coordinates divided by the shoe length, x mirrored so every print becomes
a left shoe.  The standardized domain is rasterized to a fixed grid
(default 397 x 307) that holds a 0/1 contact indicator and a per-pixel
RAC count.

Coordinate conventions
----------------------
Raw coordinates are plain mathematical (x right, y up); a raw mask pixel
``mask[r, c]`` covers x in [c, c+1), y in [r, r+1).  Standardized
coordinates put the top landmark at (0, +0.5) and the bottom at (0, -0.5).
Grid row 0 is the top of the shoe; pixel size is ``1/grid_height`` in
standardized units, and columns are centered on x = 0.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sp_stats

from .errors import InvalidInputError, OutOfDomainError

DEFAULT_GRID = (397, 307)


@dataclass
class RawPrint:
    """One lab print in its original image coordinates."""

    print_id: str
    landmark_top: tuple
    landmark_bottom: tuple
    rac_points: list
    contact_mask: np.ndarray
    is_right_shoe: bool = False

    def __post_init__(self):
        self.landmark_top = (float(self.landmark_top[0]), float(self.landmark_top[1]))
        self.landmark_bottom = (float(self.landmark_bottom[0]),
                                float(self.landmark_bottom[1]))
        self.rac_points = [(float(p[0]), float(p[1])) for p in self.rac_points]
        self.contact_mask = np.asarray(self.contact_mask, dtype=bool)
        if self.landmark_top == self.landmark_bottom:
            raise InvalidInputError(
                f"print {self.print_id}: landmarks coincide at {self.landmark_top}")
        h, w = self.contact_mask.shape
        for p in self.rac_points:
            if not (0 <= p[0] <= w and 0 <= p[1] <= h):
                raise InvalidInputError(
                    f"print {self.print_id}: RAC {p} outside the {h}x{w} image")


@dataclass
class StandardShoe:
    """A standardized shoe on the common grid.

    ``S`` is the 0/1 contact indicator and ``n`` the RAC count per pixel.
    RACs are observable only on the contact surface, so S[p] = 0 forces
    n[p] = 0; loaders and `normalize` enforce the converse repair (S set
    to 1 wherever n >= 1) before construction.
    """

    shoe_id: str
    S: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        self.S = np.asarray(self.S, dtype=np.uint8)
        self.n = np.asarray(self.n, dtype=np.int64)
        if self.S.shape != self.n.shape:
            raise InvalidInputError(
                f"shoe {self.shoe_id}: S{self.S.shape} and n{self.n.shape} differ")
        if np.any(self.n < 0):
            raise InvalidInputError(f"shoe {self.shoe_id}: negative RAC count")
        if np.any((self.S == 0) & (self.n > 0)):
            raise InvalidInputError(
                f"shoe {self.shoe_id}: RACs recorded off the contact surface")

    @property
    def grid_height(self) -> int:
        return self.S.shape[0]

    @property
    def grid_width(self) -> int:
        return self.S.shape[1]

    @property
    def total_racs(self) -> int:
        return int(self.n.sum())

    @property
    def contact_pixels(self) -> int:
        return int(self.S.sum())


@dataclass
class ShoeRecord:
    """One shoe aggregated on a partition: per-cell area and RAC count.

    ``cell_index`` is None when the vectors cover every cell of the
    partition in order; a retained subsample stores the covered cell ids
    there instead.
    """

    shoe_id: str
    s_area: np.ndarray
    counts: np.ndarray
    cell_index: np.ndarray | None = None

    def __post_init__(self):
        self.s_area = np.asarray(self.s_area, dtype=float)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.s_area.shape != self.counts.shape:
            raise InvalidInputError(
                f"shoe {self.shoe_id}: area/count vectors differ in length")
        if np.any(self.s_area < 0) or np.any(self.counts < 0):
            raise InvalidInputError(f"shoe {self.shoe_id}: negative entries")
        if np.any((self.s_area == 0) & (self.counts > 0)):
            raise InvalidInputError(
                f"shoe {self.shoe_id}: counts on cells with zero contact area")
        if self.cell_index is not None:
            self.cell_index = np.asarray(self.cell_index, dtype=np.int64)
            if self.cell_index.shape != self.counts.shape:
                raise InvalidInputError(
                    f"shoe {self.shoe_id}: cell_index length mismatch")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

def _standardize_points(points, top, bottom, is_right_shoe):
    """Map raw (x, y) points into the shoe-aligned unit-length frame."""
    top = np.asarray(top, dtype=float)
    bottom = np.asarray(bottom, dtype=float)
    mid = 0.5 * (top + bottom)
    axis = top - bottom
    length = float(np.hypot(*axis))
    if length == 0.0:
        raise InvalidInputError("landmarks coincide")
    # Rotation taking the landmark axis onto +y.
    c = axis[1] / length
    s = axis[0] / length
    rot = np.array([[c, -s], [s, c]])
    pts = (np.asarray(points, dtype=float).reshape(-1, 2) - mid) @ rot.T / length
    if is_right_shoe:
        pts[:, 0] *= -1.0
    return pts, mid, rot, length


def _raster_index(scaled):
    """Pixel index for a scaled coordinate; boundary ties go to the lower pixel."""
    idx = np.ceil(scaled) - 1
    return np.where(scaled == 0.0, 0, idx).astype(np.int64)


def normalize(raw: RawPrint, grid: tuple = DEFAULT_GRID) -> StandardShoe:
    """Standardize a raw print and rasterize it onto the common grid.

    Applies translation to the landmark midpoint, rotation of the major
    axis to vertical, scaling by the shoe length, and mirroring of x for
    right shoes.  RAC centers are assigned to the pixel containing them;
    the contact mask is resampled at pixel centers; any pixel holding a
    RAC has its contact indicator forced to 1.
    """
    height, width = int(grid[0]), int(grid[1])
    if height <= 0 or width <= 0:
        raise InvalidInputError(f"grid dimensions must be positive, got {grid}")

    rac_std, mid, rot, length = _standardize_points(
        raw.rac_points if raw.rac_points else np.empty((0, 2)),
        raw.landmark_top, raw.landmark_bottom, raw.is_right_shoe)

    # RAC rasterization: u measures down from the top edge, v right from
    # the left edge, both in pixel units of size 1/height.
    n = np.zeros((height, width), dtype=np.int64)
    half_w = width / (2.0 * height)
    for (x, y), orig in zip(rac_std, raw.rac_points):
        u = (0.5 - y) * height
        v = (x + half_w) * height
        if not (0.0 <= u <= height and 0.0 <= v <= width):
            raise OutOfDomainError(orig)
        r = int(_raster_index(np.array(u)))
        col = int(_raster_index(np.array(v)))
        n[r, col] += 1

    # Contact mask: sample the raw mask at each standardized pixel center.
    rows = np.arange(height)
    cols = np.arange(width)
    y_c = 0.5 - (rows + 0.5) / height
    x_c = (cols + 0.5) / height - half_w
    xx, yy = np.meshgrid(x_c, y_c)
    std_pts = np.column_stack([xx.ravel(), yy.ravel()])
    if raw.is_right_shoe:
        std_pts = std_pts * np.array([-1.0, 1.0])
    raw_pts = (std_pts * length) @ rot + mid
    mh, mw = raw.contact_mask.shape
    rx = np.floor(raw_pts[:, 0]).astype(np.int64)
    ry = np.floor(raw_pts[:, 1]).astype(np.int64)
    inside = (rx >= 0) & (rx < mw) & (ry >= 0) & (ry < mh)
    S = np.zeros(height * width, dtype=np.uint8)
    S[inside] = raw.contact_mask[ry[inside], rx[inside]]
    S = S.reshape(height, width)
    S[n > 0] = 1
    return StandardShoe(shoe_id=raw.print_id, S=S, n=n)


def binarize_counts(shoe: StandardShoe):
    """Cap per-pixel RAC counts at 1.

    Returns ``(shoe', n_modified)`` where `n_modified` counts the pixels
    whose count was reduced.
    """
    n_mod = int(np.count_nonzero(shoe.n >= 2))
    capped = np.minimum(shoe.n, 1)
    return StandardShoe(shoe_id=shoe.shoe_id, S=shoe.S.copy(), n=capped), n_mod


# ---------------------------------------------------------------------------
# Descriptive statistics
# ---------------------------------------------------------------------------

@dataclass
class StatsReport:
    shoe_ids: list
    rac_counts: np.ndarray
    contact_counts: np.ndarray
    cumulative_contact: np.ndarray
    spearman: float | None

    def to_dict(self) -> dict:
        return {
            "shoes": [
                {"shoe_id": sid, "contact_pixels": int(c), "rac_count": int(r)}
                for sid, c, r in zip(self.shoe_ids, self.contact_counts,
                                     self.rac_counts)
            ],
            "spearman_contact_vs_racs": self.spearman,
            "cumulative_contact": self.cumulative_contact.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def shoe_table_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["shoe_id", "contact_pixels", "rac_count"])
        for sid, c, r in zip(self.shoe_ids, self.contact_counts, self.rac_counts):
            w.writerow([sid, int(c), int(r)])
        return buf.getvalue()


def descriptive_stats(shoes: list) -> StatsReport:
    """Per-shoe summaries plus the contact-area / RAC-count rank correlation.

    The Spearman statistic is None when either ranking is degenerate
    (e.g. identical shoes).  Ties get average ranks.
    """
    if len(shoes) < 2:
        raise InvalidInputError("descriptive_stats needs at least two shoes")
    shape = shoes[0].S.shape
    for s in shoes:
        if s.S.shape != shape:
            raise InvalidInputError("shoes are on different grids")
    contact = np.array([s.contact_pixels for s in shoes], dtype=np.int64)
    racs = np.array([s.total_racs for s in shoes], dtype=np.int64)
    cumulative = np.zeros(shape, dtype=np.int64)
    for s in shoes:
        cumulative += s.S
    if np.all(contact == contact[0]) or np.all(racs == racs[0]):
        rho = None
    else:
        rho = float(sp_stats.spearmanr(contact, racs).statistic)
        if math.isnan(rho):
            rho = None
    return StatsReport(
        shoe_ids=[s.shoe_id for s in shoes],
        rac_counts=racs,
        contact_counts=contact,
        cumulative_contact=cumulative,
        spearman=rho,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------
#
# CSV schema: header ``shoe_id,x,y,S,n`` with one row per pixel having
# S > 0 or n > 0; x is the column index and y the row index.  Pixels not
# listed are S = 0, n = 0.
#
# JSON schema (one shoe per object, file holds a list or a single object):
#   {"shoe_id": str, "grid": [height, width],
#    "contact_rle": [[row, col_start, run_length], ...],
#    "rac_pixels": [[row, col], ...]}            # repeated entries add up

def shoes_to_csv(shoes, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["shoe_id", "x", "y", "S", "n"])
        for shoe in shoes:
            ys, xs = np.nonzero((shoe.S > 0) | (shoe.n > 0))
            for y, x in zip(ys, xs):
                w.writerow([shoe.shoe_id, int(x), int(y),
                            int(shoe.S[y, x]), int(shoe.n[y, x])])


def shoes_from_csv(path, grid: tuple = DEFAULT_GRID) -> list:
    """Load standardized shoes from the pixel CSV format.

    Contact is repaired (S set to 1) on any pixel carrying a RAC, matching
    the rule applied during standardization.
    """
    height, width = int(grid[0]), int(grid[1])
    order: list = []
    data: dict = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"shoe_id", "x", "y", "S", "n"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise InvalidInputError(
                f"{path}: expected CSV header shoe_id,x,y,S,n")
        for row in reader:
            sid = row["shoe_id"]
            if sid not in data:
                data[sid] = (np.zeros((height, width), dtype=np.uint8),
                             np.zeros((height, width), dtype=np.int64))
                order.append(sid)
            x, y = int(row["x"]), int(row["y"])
            if not (0 <= x < width and 0 <= y < height):
                raise OutOfDomainError((x, y),
                                       f"{path}: pixel ({x},{y}) outside "
                                       f"{height}x{width} grid for shoe {sid}")
            S, n = data[sid]
            S[y, x] = 1 if int(row["S"]) > 0 else S[y, x]
            n[y, x] += int(row["n"])
    shoes = []
    for sid in order:
        S, n = data[sid]
        S[n > 0] = 1
        shoes.append(StandardShoe(shoe_id=sid, S=S, n=n))
    return shoes


def _mask_to_rle(S: np.ndarray) -> list:
    rle = []
    for r in range(S.shape[0]):
        row = S[r]
        idx = np.flatnonzero(np.diff(np.concatenate(([0], row, [0]))))
        for start, stop in zip(idx[::2], idx[1::2]):
            rle.append([int(r), int(start), int(stop - start)])
    return rle


def shoes_to_json(shoes, path) -> None:
    objs = []
    for shoe in shoes:
        ys, xs = np.nonzero(shoe.n)
        rac_pixels = []
        for y, x in zip(ys, xs):
            rac_pixels.extend([[int(y), int(x)]] * int(shoe.n[y, x]))
        objs.append({
            "shoe_id": shoe.shoe_id,
            "grid": [shoe.grid_height, shoe.grid_width],
            "contact_rle": _mask_to_rle(shoe.S),
            "rac_pixels": rac_pixels,
        })
    with open(path, "w") as fh:
        json.dump(objs, fh, sort_keys=True)


def shoes_from_json(path) -> list:
    with open(path) as fh:
        objs = json.load(fh)
    if isinstance(objs, dict):
        objs = [objs]
    shoes = []
    for obj in objs:
        height, width = obj["grid"]
        S = np.zeros((height, width), dtype=np.uint8)
        for r, start, run in obj["contact_rle"]:
            if not (0 <= r < height and 0 <= start and start + run <= width):
                raise InvalidInputError(
                    f"{path}: RLE run {(r, start, run)} outside grid")
            S[r, start:start + run] = 1
        n = np.zeros((height, width), dtype=np.int64)
        for y, x in obj.get("rac_pixels", []):
            if not (0 <= y < height and 0 <= x < width):
                raise OutOfDomainError((x, y))
            n[y, x] += 1
        S[n > 0] = 1
        shoes.append(StandardShoe(shoe_id=obj["shoe_id"], S=S, n=n))
    return shoes


def load_shoes(path, grid: tuple = DEFAULT_GRID) -> list:
    """Dispatch on extension: .csv or .json."""
    p = str(path)
    if p.endswith(".json"):
        return shoes_from_json(p)
    return shoes_from_csv(p, grid=grid)
