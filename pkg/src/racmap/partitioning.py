"""Cell systems over the standardized sole grid.

Two partitions matter in practice: the maximal-resolution pixel partition
and the 14-region expert layout (five horizontal bands, a two-way left /
right split, and the top band subdivided around the pad of the foot).
A generic banded partition is also provided for coarser studies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, InvalidLayoutError
from .shoe_data import ShoeRecord, StandardShoe


@dataclass
class Cell:
    """One partition cell: its pixels and standardized-unit centroid."""

    cell_id: int
    pixel_rows: np.ndarray
    pixel_cols: np.ndarray
    centroid: tuple

    @property
    def size(self) -> int:
        return self.pixel_rows.size


@dataclass
class Partition:
    """A disjoint covering of the grid by cells.

    ``labels`` maps each pixel to its cell id; cells are ordered by id.
    """

    partition_id: str
    kind: str  # "pixel" or "region"
    grid: tuple
    labels: np.ndarray
    cells: list = field(default_factory=list)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def cell_sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.cells], dtype=np.int64)


def _centroid(rows, cols, grid):
    """Standardized-unit centroid of a pixel set (top landmark at y=+0.5)."""
    height, width = grid
    y = 0.5 - (rows.mean() + 0.5) / height
    x = (cols.mean() + 0.5) / height - width / (2.0 * height)
    return (float(x), float(y))


def _build_cells(labels, grid, n_cells):
    cells = []
    for cid in range(n_cells):
        rows, cols = np.nonzero(labels == cid)
        if rows.size == 0:
            raise InvalidLayoutError(f"cell {cid} contains no pixels")
        cells.append(Cell(cell_id=cid, pixel_rows=rows, pixel_cols=cols,
                          centroid=_centroid(rows, cols, grid)))
    return cells


def partition_from_labels(labels, partition_id, kind="region") -> Partition:
    """Build and validate a partition from a per-pixel label matrix.

    Labels must be consecutive integers starting at 0; -1 marks uncovered
    pixels and triggers an invalid-layout error listing them.
    """
    labels = np.asarray(labels, dtype=np.int64)
    grid = labels.shape
    uncovered = np.argwhere(labels < 0)
    if uncovered.size:
        sample = [tuple(int(v) for v in p) for p in uncovered[:20]]
        raise InvalidLayoutError(
            f"{uncovered.shape[0]} pixels are not covered by any cell "
            f"(first offenders, as (row, col): {sample})",
            offending_pixels=sample)
    n_cells = int(labels.max()) + 1
    cells = _build_cells(labels, grid, n_cells)
    return Partition(partition_id=partition_id, kind=kind, grid=grid,
                     labels=labels, cells=cells)


def partition_from_pixel_sets(pixel_sets, grid, partition_id,
                              kind="region") -> Partition:
    """Build a partition from explicit per-cell pixel sets, validating that
    they tile the grid (no overlaps, no gaps)."""
    labels = np.full(grid, -1, dtype=np.int64)
    overlaps = []
    for cid, pixels in enumerate(pixel_sets):
        for (r, c) in pixels:
            if labels[r, c] >= 0:
                overlaps.append((int(r), int(c)))
            labels[r, c] = cid
    if overlaps:
        raise InvalidLayoutError(
            f"{len(overlaps)} pixels claimed by more than one cell "
            f"(first offenders: {overlaps[:20]})", offending_pixels=overlaps)
    return partition_from_labels(labels, partition_id, kind=kind)


def pixel_partition(grid: tuple) -> Partition:
    """One cell per pixel; cell ids run in row-major order."""
    height, width = int(grid[0]), int(grid[1])
    if height <= 0 or width <= 0:
        raise InvalidInputError(f"grid dimensions must be positive, got {grid}")
    labels = np.arange(height * width, dtype=np.int64).reshape(height, width)
    rows, cols = np.divmod(np.arange(height * width), width)
    cells = [
        Cell(cell_id=int(i), pixel_rows=rows[i:i + 1], pixel_cols=cols[i:i + 1],
             centroid=_centroid(rows[i:i + 1], cols[i:i + 1], (height, width)))
        for i in range(height * width)
    ]
    return Partition(partition_id=f"pixel_{height}x{width}", kind="pixel",
                     grid=(height, width), labels=labels, cells=cells)


def banded_partition(grid: tuple, n_bands: int, n_columns: int) -> Partition:
    """Equal bands by row range crossed with equal column ranges."""
    height, width = int(grid[0]), int(grid[1])
    if n_bands < 1 or n_columns < 1:
        raise InvalidInputError("band and column counts must be >= 1")
    if n_bands > height or n_columns > width:
        raise InvalidInputError("more cells than pixels along an axis")
    row_edges = np.linspace(0, height, n_bands + 1).round().astype(int)
    col_edges = np.linspace(0, width, n_columns + 1).round().astype(int)
    labels = np.empty((height, width), dtype=np.int64)
    band_of_row = np.searchsorted(row_edges, np.arange(height), side="right") - 1
    col_of_col = np.searchsorted(col_edges, np.arange(width), side="right") - 1
    labels[:] = band_of_row[:, None] * n_columns + col_of_col[None, :]
    return partition_from_labels(
        labels, f"banded_{n_bands}x{n_columns}", kind="region")


# ---------------------------------------------------------------------------
# Expert layout
# ---------------------------------------------------------------------------

@dataclass
class RegionLayout:
    """Configuration of the 14-region expert partition.

    ``y_cuts`` are four fractions of the grid height separating the five
    bands (top to bottom); ``x_cut`` splits columns left/right.  The pad
    band (index into the five bands, usually 0 = top) is subdivided: a toe
    strip above ``pad_toe_frac`` of the band, then an inner polygon
    (fractions of width/height, as (fx, fy) vertices) versus the outer
    remainder.  Each piece is crossed with the left/right split, so the
    pad band holds six cells and the full layout 4*2 + 6 = 14.

    The shipped default approximates the published picture; its exact
    boundaries are not documented anywhere, so treat the geometry as
    indicative rather than authoritative.
    """

    y_cuts: tuple = (0.32, 0.5, 0.65, 0.83)
    x_cut: float = 0.5
    pad_band: int = 0
    pad_toe_frac: float = 0.28
    pad_inner_poly: tuple = (
        (0.28, 0.10), (0.72, 0.10), (0.86, 0.17), (0.86, 0.25),
        (0.72, 0.32), (0.28, 0.32), (0.14, 0.25), (0.14, 0.17),
    )

    def validate(self):
        cuts = tuple(self.y_cuts)
        if len(cuts) != 4 or not all(0 < c < 1 for c in cuts) \
                or any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise InvalidLayoutError(
                f"y_cuts must be 4 increasing fractions in (0,1), got {cuts}")
        if not (0 < self.x_cut < 1):
            raise InvalidLayoutError(f"x_cut must be in (0,1), got {self.x_cut}")
        if not (0 <= self.pad_band <= 4):
            raise InvalidLayoutError(f"pad_band must index one of 5 bands")
        if not (0 < self.pad_toe_frac < 1):
            raise InvalidLayoutError("pad_toe_frac must be in (0,1)")
        if len(self.pad_inner_poly) < 3:
            raise InvalidLayoutError("pad_inner_poly needs >= 3 vertices")

    def to_dict(self) -> dict:
        return {
            "y_cuts": list(self.y_cuts),
            "x_cut": self.x_cut,
            "pad_band": self.pad_band,
            "pad_toe_frac": self.pad_toe_frac,
            "pad_inner_poly": [list(v) for v in self.pad_inner_poly],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RegionLayout":
        return cls(
            y_cuts=tuple(d.get("y_cuts", cls.y_cuts)),
            x_cut=d.get("x_cut", cls.x_cut),
            pad_band=d.get("pad_band", cls.pad_band),
            pad_toe_frac=d.get("pad_toe_frac", cls.pad_toe_frac),
            pad_inner_poly=tuple(tuple(v) for v in d.get(
                "pad_inner_poly", cls.pad_inner_poly)),
        )

    @classmethod
    def from_json_file(cls, path) -> "RegionLayout":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _points_in_polygon(px, py, poly):
    """Even-odd ray casting, vectorized over points."""
    poly = np.asarray(poly, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    xj, yj = poly[-1]
    for xi, yi in poly:
        crosses = ((yi > py) != (yj > py))
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (xj - xi) * (py - yi) / (yj - yi) + xi
        inside ^= crosses & (px < x_at)
        xj, yj = xi, yi
    return inside


def expert_partition(layout: RegionLayout | None = None,
                     grid: tuple = (397, 307)) -> Partition:
    """The 14-region expert division of the sole."""
    layout = layout or RegionLayout()
    layout.validate()
    height, width = int(grid[0]), int(grid[1])
    if height < 7 or width < 2:
        raise InvalidInputError(f"grid {grid} too small for 14 regions")

    band_edges = [0] + [int(round(c * height)) for c in layout.y_cuts] + [height]
    x_edge = int(round(layout.x_cut * width))
    if any(b <= a for a, b in zip(band_edges, band_edges[1:])) \
            or not (0 < x_edge < width):
        raise InvalidLayoutError("layout cuts collapse on this grid")

    rows = np.arange(height)
    band_of_row = np.searchsorted(band_edges, rows, side="right") - 1
    is_right = np.arange(width)[None, :] >= x_edge

    labels = np.full((height, width), -1, dtype=np.int64)
    next_id = 0
    for band in range(5):
        in_band = (band_of_row == band)[:, None] & np.ones((1, width), dtype=bool)
        if band != layout.pad_band:
            labels[in_band & ~is_right] = next_id
            labels[in_band & is_right] = next_id + 1
            next_id += 2
            continue
        # Pad band: toe strip, then inner polygon vs outer remainder.
        b0, b1 = band_edges[band], band_edges[band + 1]
        toe_edge = b0 + max(1, int(round(layout.pad_toe_frac * (b1 - b0))))
        if toe_edge >= b1:
            raise InvalidLayoutError("toe strip swallows the whole pad band")
        in_toe = np.zeros((height, width), dtype=bool)
        in_toe[b0:toe_edge, :] = True
        rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
        fx = (cc + 0.5) / width
        fy = (rr + 0.5) / height
        inner = _points_in_polygon(fx, fy, layout.pad_inner_poly)
        in_ball = in_band & ~in_toe
        pieces = [in_toe & in_band, in_ball & inner, in_ball & ~inner]
        for piece in pieces:
            labels[piece & ~is_right] = next_id
            labels[piece & is_right] = next_id + 1
            next_id += 2
    try:
        part = partition_from_labels(labels, "expert_14", kind="region")
    except InvalidLayoutError as exc:
        raise InvalidLayoutError(
            f"expert layout does not tile the {height}x{width} grid: {exc}",
            offending_pixels=getattr(exc, "offending_pixels", None)) from exc
    if part.n_cells != 14:
        raise InvalidLayoutError(
            f"expert layout produced {part.n_cells} regions instead of 14 "
            f"(a cut or the pad polygon is degenerate on this grid)")
    return part


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def aggregate(shoe: StandardShoe, part: Partition) -> ShoeRecord:
    """Sum contact area and RAC counts over the cells of a partition."""
    if shoe.S.shape != tuple(part.grid):
        raise InvalidInputError(
            f"shoe {shoe.shoe_id} grid {shoe.S.shape} does not match "
            f"partition grid {tuple(part.grid)}")
    flat = part.labels.ravel()
    s_area = np.bincount(flat, weights=shoe.S.ravel(),
                         minlength=part.n_cells).astype(float)
    counts = np.bincount(flat, weights=shoe.n.ravel(),
                         minlength=part.n_cells).astype(np.int64)
    return ShoeRecord(shoe_id=shoe.shoe_id, s_area=s_area, counts=counts)


def disaggregate_pixel(record: ShoeRecord, part: Partition) -> StandardShoe:
    """Invert `aggregate` for the pixel partition (it is lossless there)."""
    if part.kind != "pixel":
        raise InvalidInputError("disaggregate_pixel needs a pixel partition")
    height, width = part.grid
    if record.cell_index is not None:
        raise InvalidInputError("record is a subsample; cannot disaggregate")
    S = (record.s_area > 0).astype(np.uint8).reshape(height, width)
    n = record.counts.reshape(height, width)
    return StandardShoe(shoe_id=record.shoe_id, S=S, n=n)
