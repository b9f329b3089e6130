"""Per-interval, per-region demand tensors replayed by the simulator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import date

import numpy as np

from .errors import ConfigurationError
from .grid import RegionGrid, assign_region, build_grid
from .trips import TripRecord

log = logging.getLogger(__name__)

ARTIFACT_VERSION = 1


@dataclass
class DemandSeries:
    """Pick-up requests and drop-offs per (interval, region)."""

    d: np.ndarray  # [T, K] pick-up requests
    o: np.ndarray  # [T, K] drop-offs
    interval_kind: str = "day"
    day0: str = ""  # ISO date of interval 0, empty for synthetic series

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=np.int64)
        self.o = np.asarray(self.o, dtype=np.int64)
        if self.d.shape != self.o.shape or self.d.ndim != 2:
            raise ConfigurationError("demand tensors must share a [T, K] shape")
        if (self.d < 0).any() or (self.o < 0).any():
            raise ConfigurationError("demand tensors must be nonnegative")

    @property
    def n_intervals(self) -> int:
        return self.d.shape[0]

    @property
    def n_regions(self) -> int:
        return self.d.shape[1]

    def weekday(self, t: int) -> int:
        """Day of week (0=Monday) for interval t; synthetic series cycle from 0."""
        if self.day0:
            return (date.fromisoformat(self.day0).weekday() + t) % 7
        return t % 7


@dataclass
class AggregateStats:
    trips_in: int = 0
    trips_out_of_area: int = 0
    trips_out_of_window: int = 0
    trips_kept: int = 0


def aggregate(trips: list[TripRecord], grid: RegionGrid) -> tuple[DemandSeries, AggregateStats]:
    """Count pick-ups by start interval/region and drop-offs by end interval/region.

    Intervals are calendar days anchored at the earliest start date; the
    horizon covers start dates only. Trips with either endpoint outside
    the grid, or a drop-off falling outside the horizon, are dropped from
    both tensors so that total pick-ups equal total drop-offs.
    """
    stats = AggregateStats(trips_in=len(trips))
    k = grid.n_regions
    if not trips:
        log.warning("aggregating an empty trip list; emitting a zero-interval series")
        return DemandSeries(np.zeros((0, k)), np.zeros((0, k))), stats

    day0 = min(t.start_time.date() for t in trips)
    day_last = max(t.start_time.date() for t in trips)
    horizon = (day_last - day0).days + 1
    d = np.zeros((horizon, k), dtype=np.int64)
    o = np.zeros((horizon, k), dtype=np.int64)

    for trip in trips:
        start_region = assign_region(trip.start_lat, trip.start_lon, grid)
        end_region = assign_region(trip.end_lat, trip.end_lon, grid)
        if start_region is None or end_region is None:
            stats.trips_out_of_area += 1
            continue
        t_start = (trip.start_time.date() - day0).days
        t_end = (trip.end_time.date() - day0).days
        if not (0 <= t_end < horizon):
            stats.trips_out_of_window += 1
            continue
        d[t_start, start_region] += 1
        o[t_end, end_region] += 1
        stats.trips_kept += 1

    return DemandSeries(d, o, day0=day0.isoformat()), stats


def resample_series(series: DemandSeries, rng: np.random.Generator) -> DemandSeries:
    """Poisson draw around each historical count; creates episode variation."""
    return DemandSeries(
        rng.poisson(series.d), rng.poisson(series.o),
        interval_kind=series.interval_kind, day0=series.day0,
    )


def save_artifact(path, series: DemandSeries, grid: RegionGrid) -> None:
    """Serialize the demand series together with its grid into one file."""
    np.savez_compressed(
        path,
        version=np.int64(ARTIFACT_VERSION),
        d=series.d,
        o=series.o,
        interval_kind=np.asarray(series.interval_kind),
        day0=np.asarray(series.day0),
        bbox=np.asarray(grid.bbox, dtype=np.float64),
        cell_km=np.float64(grid.cell_km),
        static_features=grid.static_features,
    )


def load_artifact(path) -> tuple[DemandSeries, RegionGrid]:
    with np.load(path) as data:
        version = int(data["version"])
        if version != ARTIFACT_VERSION:
            raise ConfigurationError(f"unsupported artifact version {version}")
        grid = build_grid(tuple(data["bbox"]), float(data["cell_km"]))
        static = np.asarray(data["static_features"], dtype=np.int64)
        if static.shape != (grid.n_regions, 3):
            raise ConfigurationError("artifact static features do not match the grid")
        grid.static_features = static
        series = DemandSeries(
            data["d"], data["o"],
            interval_kind=str(data["interval_kind"][()]),
            day0=str(data["day0"][()]),
        )
    if series.n_regions != grid.n_regions:
        raise ConfigurationError("artifact demand tensors do not match the grid")
    return series, grid
