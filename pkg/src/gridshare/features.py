"""State feature encoding: temporal signals, availability, demand history.

The full state seen by every agent is the concatenation of
  [time-of-day/day-of-week encoding (4),
   per-region available units (K),
   per-region demand history (2K mean/std pairs, or K one-step values),
   per-region static urban features (3K)].
Count-valued blocks are scaled to keep the MLP inputs O(1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .demand import DemandSeries
from .errors import ValidationError
from .grid import RegionGrid


@dataclass
class StateConfig:
    history_window: int = 8  # intervals of pick-up history feeding mean/std
    demand_history: str = "stats"  # "stats" (mean/std pairs) or "onestep"

    def __post_init__(self):
        if self.history_window < 1:
            raise ValidationError("history_window must be >= 1")
        if self.demand_history not in ("stats", "onestep"):
            raise ValidationError(f"unknown demand_history {self.demand_history!r}")


def temporal_encode(hour: float, weekday: int) -> np.ndarray:
    """[sin, cos] pairs for the daily and weekly cycles."""
    if not 0.0 <= hour < 24.0:
        raise ValidationError(f"hour {hour} outside [0, 24)")
    if weekday not in range(7):
        raise ValidationError(f"weekday {weekday} outside 0..6")
    ha = 2.0 * math.pi * hour / 24.0
    wa = 2.0 * math.pi * weekday / 7.0
    return np.array([math.sin(ha), math.cos(ha), math.sin(wa), math.cos(wa)])


def pickup_stats(d: np.ndarray, t: int, window: int) -> np.ndarray:
    """Interleaved per-region (mean, population std) of recent pick-ups.

    The statistics cover the intervals [max(0, t-window), t); at t=0 there
    is no history and both moments are zero.
    """
    if t < 0 or window < 1:
        raise ValidationError("need t >= 0 and window >= 1")
    k = d.shape[1]
    out = np.zeros(2 * k)
    hist = d[max(0, t - window):t].astype(np.float64)
    if hist.shape[0] > 0:
        out[0::2] = hist.mean(axis=0)
        out[1::2] = hist.std(axis=0)  # population std (ddof=0)
    return out


@dataclass
class FeatureScales:
    """Fixed normalizers derived once per environment."""

    inv_count: float  # applied to availability and demand-history counts
    inv_static: np.ndarray  # per-column, applied to static features

    @classmethod
    def for_env(cls, grid: RegionGrid, fleet_size: int) -> "FeatureScales":
        per_region = max(1.0, fleet_size / max(1, grid.n_regions))
        static_max = np.maximum(1.0, grid.static_features.max(axis=0).astype(np.float64))
        return cls(inv_count=1.0 / per_region, inv_static=1.0 / static_max)


@dataclass
class StateFeatures:
    """Structured state at one interval, before flattening."""

    temporal: np.ndarray  # 4-vector
    availability: np.ndarray  # [K]
    pickup: np.ndarray  # [2K] interleaved stats, or [K] one-step counts
    static: np.ndarray  # [K, 3]
    history_window: int

    def vector(self, scales: FeatureScales) -> np.ndarray:
        return np.concatenate([
            self.temporal,
            self.availability * scales.inv_count,
            self.pickup * scales.inv_count,
            (self.static * scales.inv_static).ravel(),
        ])

    def agent_slices(self, scales: FeatureScales) -> np.ndarray:
        """Per-region view [K, 4 + per-region demand dims + 1 + 3] used by
        the trajectory encoder."""
        k = self.availability.shape[0]
        if self.pickup.shape[0] == 2 * k:
            hist = self.pickup.reshape(k, 2)
        else:
            hist = self.pickup.reshape(k, 1)
        return np.concatenate([
            np.tile(self.temporal, (k, 1)),
            self.availability[:, None] * scales.inv_count,
            hist * scales.inv_count,
            self.static * scales.inv_static,
        ], axis=1)


def state_dim(n_regions: int, cfg: StateConfig) -> int:
    hist = 2 * n_regions if cfg.demand_history == "stats" else n_regions
    return 4 + n_regions + hist + 3 * n_regions


def agent_slice_dim(cfg: StateConfig) -> int:
    return 4 + 1 + (2 if cfg.demand_history == "stats" else 1) + 3


def build_state(series: DemandSeries, grid: RegionGrid, availability: np.ndarray,
                t: int, cfg: StateConfig) -> StateFeatures:
    """Assemble the state at interval t given current availability.

    Daily intervals carry no sub-daily signal, so the time-of-day pair is
    encoded at the interval's representative hour 0.
    """
    if cfg.demand_history == "stats":
        pickup = pickup_stats(series.d, t, cfg.history_window)
    else:
        prev = series.d[t - 1].astype(np.float64) if t >= 1 else np.zeros(series.n_regions)
        pickup = prev
    return StateFeatures(
        temporal=temporal_encode(0.0, series.weekday(t)),
        availability=availability.astype(np.float64),
        pickup=pickup,
        static=grid.static_features.astype(np.float64),
        history_window=cfg.history_window,
    )
