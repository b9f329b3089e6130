"""Episode-boundary regrouping: divergence tracking, split/merge sweeps,
and the adaptive regrouping period."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .encoder import GaussianEmbedding
from .errors import ConfigurationError
from .groups import GroupTree, centroid, intra_divergence, merge_affinity, try_merge, try_split

PERIOD_MIN = 1
PERIOD_MAX = 64


@dataclass
class ControllerConfig:
    base_period: int = 8          # initial episodes between regroup sweeps
    smoothing: float = 0.9        # exponential smoother on group divergence
    sensitivity: float = 3.0      # how sharply drift shortens the period
    target_drift: float = 0.02    # divergence level that keeps the period at base
    split_threshold: float = 0.5
    merge_threshold: float = 0.05
    min_split_size: int = 2       # groups at or below this size never split
    max_subgroups: int = 4        # children per split when refinement is on
    max_global_groups: int = 4
    max_local_groups: int = 16
    initial_global_groups: int = 2
    refine_after_split: bool = False
    adaptive_period: bool = True  # False pins the period at base_period
    enabled: bool = True          # False disables split/merge entirely

    def __post_init__(self):
        if not 0.0 < self.smoothing < 1.0:
            raise ConfigurationError("smoothing must lie in (0, 1)")
        if min(self.split_threshold, self.merge_threshold, self.target_drift,
               self.sensitivity) <= 0:
            raise ConfigurationError("controller thresholds must be positive")
        if self.base_period < PERIOD_MIN or self.base_period > PERIOD_MAX:
            raise ConfigurationError("base_period outside the allowed period range")


@dataclass
class ControllerState:
    running_divergence: float = 0.0
    period: int = 8
    episodes_since_regroup: int = 0
    events: list[dict] = field(default_factory=list)


def update_running_divergence(previous: float, group_divergences: list[float],
                              smoothing: float) -> float:
    """Exponential smoother over the mean within-group divergence."""
    if not group_divergences:
        raise ConfigurationError("need at least one group divergence")
    mean_div = float(np.mean(group_divergences))
    return smoothing * previous + (1.0 - smoothing) * mean_div


def update_period(cfg: ControllerConfig, running_divergence: float) -> int:
    """Shrink the regroup interval exponentially as drift exceeds target.

    period = clip(max(1, ceil(base * exp(-sensitivity * (drift - target)))),
                  1, 64); stable groups regroup rarely, drifting ones often.
    """
    raw = cfg.base_period * math.exp(-cfg.sensitivity * (running_divergence - cfg.target_drift))
    return int(min(PERIOD_MAX, max(PERIOD_MIN, max(1, math.ceil(raw)))))


def regroup_tick(tree: GroupTree, cfg: ControllerConfig, state: ControllerState,
                 embeddings: dict[int, GaussianEmbedding], rng: np.random.Generator,
                 episode: int = 0) -> bool:
    """Per-episode controller hook.

    The running divergence updates every call; structural changes (split
    sweep in descending divergence, then merge sweep in ascending centroid
    affinity) and the period update only fire once the episode counter
    reaches the current period. Returns True when a sweep ran.
    """
    divs = {lid: intra_divergence([embeddings[m] for m in tree.locals[lid].members])
            for lid in tree.local_ids_sorted()}
    state.running_divergence = update_running_divergence(
        state.running_divergence, list(divs.values()), cfg.smoothing)
    state.episodes_since_regroup += 1
    if state.episodes_since_regroup < state.period or not cfg.enabled:
        if state.episodes_since_regroup >= state.period:
            state.episodes_since_regroup = 0  # keep the cadence when disabled
        return False

    # Split sweep: most-divergent groups first (ties by lower id).
    children = cfg.max_subgroups if cfg.refine_after_split else 2
    for lid in sorted(divs, key=lambda l: (-divs[l], l)):
        created = try_split(tree, lid, embeddings, cfg.split_threshold,
                            cfg.min_split_size, cfg.max_local_groups, rng,
                            max_subgroups=children)
        if created:
            state.events.append({
                "episode": episode, "op": "split", "group_in": lid,
                "groups_out": list(created), "divergence": divs[lid],
            })

    # Merge sweep: repeatedly fuse the closest same-global pair.
    while True:
        best = None
        for g in range(tree.global_count):
            lids = sorted(tree.globals[g].local_ids)
            cents = {lid: centroid([embeddings[m] for m in tree.locals[lid].members])
                     for lid in lids}
            for i, la in enumerate(lids):
                for lb in lids[i + 1:]:
                    aff = merge_affinity(cents[la], cents[lb])
                    if best is None or aff < best[0]:
                        best = (aff, la, lb)
        if best is None or best[0] >= cfg.merge_threshold:
            break
        _, la, lb = best
        survivor = try_merge(tree, la, lb, embeddings, cfg.merge_threshold)
        if survivor is None:
            break
        state.events.append({
            "episode": episode, "op": "merge", "groups_in": [la, lb],
            "group_out": survivor, "affinity": best[0],
        })

    tree.validate(max_global=cfg.max_global_groups, max_local=cfg.max_local_groups)

    period_before = state.period
    if cfg.adaptive_period:
        state.period = update_period(cfg, state.running_divergence)
    if state.period != period_before:
        state.events.append({
            "episode": episode, "op": "period",
            "period_before": period_before, "period_after": state.period,
            "running_divergence": state.running_divergence,
        })
    state.episodes_since_regroup = 0
    return True
