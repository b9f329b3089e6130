"""Rectangular region grid over a geographic bounding box.

Cells are indexed row-major with row 0 at the southern edge and column 0
at the western edge, so index = row * cols + col. Each cell knows its
four lattice neighbors (north, south, east, west); absent neighbors at
the boundary are -1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)

KM_PER_DEG_LAT = 110.574
KM_PER_DEG_LON_EQUATOR = 111.320

NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
DIRECTION_NAMES = ("north", "south", "east", "west")
# Row/col displacement per direction, in (drow, dcol).
_DIR_OFFSETS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass
class RegionGrid:
    bbox: tuple[float, float, float, float]  # lat_min, lat_max, lon_min, lon_max
    cell_km: float
    rows: int
    cols: int
    lat_step: float  # cell height in degrees
    lon_step: float  # cell width in degrees
    adjacency: np.ndarray  # [K, 4] neighbor index per direction, -1 if absent
    static_features: np.ndarray = field(default=None)  # [K, 3] road/lane/poi counts

    def __post_init__(self):
        if self.static_features is None:
            self.static_features = np.zeros((self.n_regions, 3), dtype=np.int64)

    @property
    def n_regions(self) -> int:
        return self.rows * self.cols

    def region_of(self, row: int, col: int) -> int:
        return row * self.cols + col

    def neighbor(self, region: int, direction: int) -> int:
        """Neighbor index in the given direction, or -1 at the boundary."""
        return int(self.adjacency[region, direction])

    def present_directions(self, region: int) -> np.ndarray:
        return self.adjacency[region] >= 0


def build_grid(bbox, cell_km: float) -> RegionGrid:
    """Tile the bounding box with square cells of side cell_km.

    The tiling starts at (lat_min, lon_min) and uses as many cells as
    needed to cover the box, so the covered extent may overhang the box
    edge when the span is not an integer multiple of the cell size.
    """
    lat_min, lat_max, lon_min, lon_max = map(float, bbox)
    if not all(math.isfinite(v) for v in (lat_min, lat_max, lon_min, lon_max)):
        raise ConfigurationError("bounding box must be finite")
    if lat_max <= lat_min or lon_max <= lon_min:
        raise ConfigurationError(f"degenerate bounding box {bbox}")
    if cell_km <= 0:
        raise ConfigurationError(f"cell size must be positive, got {cell_km}")

    mid_lat = 0.5 * (lat_min + lat_max)
    km_per_deg_lon = KM_PER_DEG_LON_EQUATOR * math.cos(math.radians(mid_lat))
    if km_per_deg_lon <= 0:
        raise ConfigurationError("bounding box too close to a pole")

    lat_span_km = (lat_max - lat_min) * KM_PER_DEG_LAT
    lon_span_km = (lon_max - lon_min) * km_per_deg_lon
    rows = max(1, math.ceil(lat_span_km / cell_km - 1e-9))
    cols = max(1, math.ceil(lon_span_km / cell_km - 1e-9))

    adjacency = np.full((rows * cols, 4), -1, dtype=np.int64)
    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            for d, (dr, dc) in enumerate(_DIR_OFFSETS):
                nr, nc = r + dr, c + dc
                if 0 <= nr < rows and 0 <= nc < cols:
                    adjacency[k, d] = nr * cols + nc

    return RegionGrid(
        bbox=(lat_min, lat_max, lon_min, lon_max),
        cell_km=float(cell_km),
        rows=rows,
        cols=cols,
        lat_step=cell_km / KM_PER_DEG_LAT,
        lon_step=cell_km / km_per_deg_lon,
        adjacency=adjacency,
    )


def assign_region(lat: float, lon: float, grid: RegionGrid) -> int | None:
    """Region index containing the point, or None when out of bounds.

    Cells are half-open along both axes, so a point exactly on a shared
    edge belongs to the cell with the larger index along that axis.
    """
    if not (math.isfinite(lat) and math.isfinite(lon)):
        return None
    lat_min, _, lon_min, _ = grid.bbox
    row = math.floor((lat - lat_min) / grid.lat_step)
    col = math.floor((lon - lon_min) / grid.lon_step)
    if 0 <= row < grid.rows and 0 <= col < grid.cols:
        return int(row * grid.cols + col)
    return None


def load_static_features(path, grid: RegionGrid) -> np.ndarray:
    """Attach per-region [roads, bike lanes, POIs] counts from a CSV file.

    A missing file is permitted: every region gets zeros and a warning is
    logged (useful for synthetic runs without map data).
    """
    k = grid.n_regions
    try:
        raw = open(path, "r", encoding="utf-8").read()
    except FileNotFoundError:
        log.warning("static feature file %s missing; using all-zero features", path)
        grid.static_features = np.zeros((k, 3), dtype=np.int64)
        return grid.static_features

    rows = []
    for ln, line in enumerate(raw.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        parts = [p for p in line.replace(",", " ").split() if p]
        if len(parts) != 3:
            raise ConfigurationError(f"{path}:{ln}: expected 3 columns, got {len(parts)}")
        try:
            vals = [int(p) for p in parts]
        except ValueError as exc:
            raise ConfigurationError(f"{path}:{ln}: non-integer feature value") from exc
        if any(v < 0 for v in vals):
            raise ConfigurationError(f"{path}:{ln}: negative feature count")
        rows.append(vals)

    if len(rows) != k:
        raise ConfigurationError(
            f"static feature file has {len(rows)} rows but the grid has {k} regions"
        )
    grid.static_features = np.asarray(rows, dtype=np.int64)
    return grid.static_features
