"""Synthetic grids and demand series for tests and desk-scale experiments.

Two generators:

* a two-region flow problem (all drop-offs on one side, all pick-ups on
  the other) whose optimum is a constant eastward shuttle, and
* a striped multi-archetype grid mixing supply-surplus columns, deficit
  columns, and self-balanced columns, with a weekday/weekend demand
  cycle. These exercise specialization: the good policy ships from
  surplus columns into their deficit neighbors and leaves balanced
  regions alone.
"""

from __future__ import annotations

import numpy as np

from .demand import DemandSeries
from .grid import KM_PER_DEG_LAT, KM_PER_DEG_LON_EQUATOR, RegionGrid, build_grid


def _grid_km(rows: int, cols: int, cell_km: float = 1.0) -> RegionGrid:
    bbox = (0.0, rows * cell_km / KM_PER_DEG_LAT,
            0.0, cols * cell_km / KM_PER_DEG_LON_EQUATOR)
    grid = build_grid(bbox, cell_km)
    assert (grid.rows, grid.cols) == (rows, cols)
    return grid


def toy_two_region(days: int = 31, demand: int = 4) -> tuple[RegionGrid, DemandSeries]:
    """West region receives all drop-offs, east region faces all demand."""
    grid = _grid_km(1, 2)
    d = np.zeros((days, 2), dtype=np.int64)
    o = np.zeros((days, 2), dtype=np.int64)
    d[:, 1] = demand
    o[:, 0] = demand
    return grid, DemandSeries(d, o)


# Column archetypes cycle west to east: surplus, deficit, balanced.
SOURCE, SINK, BALANCED = 0, 1, 2
_STATIC_BY_ARCHETYPE = {
    SOURCE: (20, 4, 2),
    SINK: (5, 20, 30),
    BALANCED: (12, 12, 10),
}


def archetype_benchmark(rows: int = 6, cols: int = 6, days: int = 31,
                        peak: int = 6, trickle: int = 1, balanced_level: int = 4,
                        weekend_factor: float = 0.5) -> tuple[RegionGrid, DemandSeries]:
    """Striped grid with three demand archetypes and a weekly cycle.

    Surplus columns accumulate drop-offs and see little demand; their
    eastern neighbors are deficit columns with the mirrored pattern;
    every third column is self-balanced. Static features are archetype-
    typed (with a small deterministic jitter) so feature clustering can
    recover the archetypes.
    """
    grid = _grid_km(rows, cols)
    n = grid.n_regions
    d = np.zeros((days, n), dtype=np.int64)
    o = np.zeros((days, n), dtype=np.int64)
    static = np.zeros((n, 3), dtype=np.int64)

    weekday_level = np.array([
        round(peak * (weekend_factor if (t % 7) >= 5 else 1.0)) for t in range(days)
    ], dtype=np.int64)

    for r in range(rows):
        for c in range(cols):
            k = r * cols + c
            archetype = c % 3
            static[k] = np.asarray(_STATIC_BY_ARCHETYPE[archetype]) + (k * 7) % 3
            if archetype == SOURCE:
                d[:, k] = trickle
                o[:, k] = weekday_level
            elif archetype == SINK:
                d[:, k] = weekday_level
                o[:, k] = trickle
            else:
                d[:, k] = balanced_level
                o[:, k] = balanced_level

    grid.static_features = static
    return grid, DemandSeries(d, o)


def archetype_of_region(region: int, cols: int) -> int:
    return (region % cols) % 3
