"""Demand-replay Markov game for grid rebalancing.

One agent per region. Each step, every agent emits nonnegative outflows
toward its four lattice neighbors; inflows are derived from neighboring
agents' outflows, which keeps the joint dynamics well-posed. Moves land
before demand is served, then pick-ups consume inventory and drop-offs
replenish it.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .demand import DemandSeries
from .errors import ConfigurationError
from .features import FeatureScales, StateConfig, build_state
from .grid import RegionGrid

log = logging.getLogger(__name__)


@dataclass
class EnvConfig:
    service_weight: float = 3.0     # credit for served fraction
    shortage_weight: float = 5.0    # penalty on unmet fraction
    move_cost_weight: float = 15.0  # penalty per relocated unit, scaled by max_move
    max_move: int = 20              # per-agent relocation cap per step
    epsilon: float = 1e-6           # demand-ratio denominator guard
    fleet_size: int = 0             # 0 = derive from mean daily demand
    max_steps: int = 31
    seed: int = 0

    def __post_init__(self):
        if min(self.service_weight, self.shortage_weight, self.move_cost_weight) <= 0:
            raise ConfigurationError("reward weights must be positive")
        if self.max_move <= 0 or self.epsilon <= 0:
            raise ConfigurationError("max_move and epsilon must be positive")
        if self.fleet_size < 0:
            raise ConfigurationError("fleet_size must be nonnegative")


@dataclass
class StepOutcome:
    inventory_next: np.ndarray      # [K] after moves, service, drop-offs
    served: np.ndarray              # [K]
    unmet: np.ndarray               # [K]
    rewards: np.ndarray             # [N] per-agent
    pre_demand_inventory: np.ndarray  # [K] after moves, before service
    actions: np.ndarray             # [N, 4] executed (sanitized) outflows
    demand: np.ndarray              # [K] the pick-ups replayed this step
    dropoffs: np.ndarray            # [K]
    t: int = 0


def derive_fleet_size(series: DemandSeries) -> int:
    """Default fleet: one mean day's total demand, at least one per region."""
    if series.n_intervals == 0:
        return series.n_regions
    mean_daily = float(series.d.sum()) / series.n_intervals
    return max(series.n_regions, int(round(mean_daily)))


def initial_inventory(series: DemandSeries, fleet_size: int) -> np.ndarray:
    """Split the fleet across regions proportionally to mean demand.

    Largest-remainder rounding keeps the total exact; ties and the
    all-zero-demand case fall back to earlier regions / a uniform split.
    """
    k = series.n_regions
    totals = series.d.sum(axis=0).astype(np.float64)
    if totals.sum() <= 0:
        totals = np.ones(k)
    quotas = fleet_size * totals / totals.sum()
    base = np.floor(quotas).astype(np.int64)
    remainder = fleet_size - int(base.sum())
    if remainder > 0:
        # stable sort: equal remainders resolve toward lower region index
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:remainder]] += 1
    return base


def sanitize_action(raw: np.ndarray, region: int, on_hand: int,
                    grid: RegionGrid, max_move: int) -> np.ndarray:
    """Project a raw outflow request onto the feasible set.

    Flows toward absent neighbors are zeroed; the L1 norm is then capped
    at min(max_move, on_hand) by proportional scaling with floors, and any
    slack from flooring is restored one unit at a time in fixed direction
    order (north, south, east, west) so the executed total is maximal.
    """
    act = np.asarray(raw, dtype=np.int64).copy()
    if act.shape != (4,):
        raise ConfigurationError(f"action must have 4 entries, got shape {act.shape}")
    act = np.maximum(act, 0)
    act[grid.adjacency[region] < 0] = 0
    cap = min(max_move, int(on_hand))
    total = int(act.sum())
    if total <= cap:
        return act
    scaled = (act * cap) // total
    slack = cap - int(scaled.sum())
    for direction in range(4):
        if slack <= 0:
            break
        room = act[direction] - scaled[direction]
        take = min(room, slack)
        scaled[direction] += take
        slack -= take
    return scaled


def net_inflow(actions: np.ndarray, region: int, grid: RegionGrid) -> int:
    """Signed net units arriving at a region from the joint action.

    Assumes one agent per region (agent i located at region i) and
    sanitized actions, so outflows toward absent neighbors are zero.
    """
    inflow = 0
    for other in range(actions.shape[0]):
        for direction in range(4):
            if grid.adjacency[other, direction] == region:
                inflow += int(actions[other, direction])
    return inflow - int(actions[region].sum())


def reward(unmet_i: float, demand_i: float, action_i: np.ndarray,
           cfg: EnvConfig) -> float:
    """Per-agent reward: served fraction credit, unmet fraction penalty,
    and a relocation cost proportional to the moved volume."""
    ratio = unmet_i / (demand_i + cfg.epsilon)
    move = float(np.abs(action_i).sum()) / cfg.max_move
    return (cfg.service_weight * (1.0 - ratio)
            - cfg.shortage_weight * ratio
            - cfg.move_cost_weight * move)


class Environment:
    """Replays a demand series under joint relocation actions.

    A single instance is stateful and must be driven by one worker at a
    time; run independent instances for parallel episodes.
    """

    def __init__(self, grid: RegionGrid, series: DemandSeries, cfg: EnvConfig,
                 state_cfg: StateConfig | None = None,
                 initial: np.ndarray | None = None):
        if series.n_regions != grid.n_regions:
            raise ConfigurationError("demand series does not match the grid")
        self.grid = grid
        self.series = series
        self.cfg = cfg
        self.state_cfg = state_cfg or StateConfig()
        self.fleet_size = cfg.fleet_size or derive_fleet_size(series)
        self.scales = FeatureScales.for_env(grid, self.fleet_size)
        self.horizon = min(series.n_intervals, cfg.max_steps)
        self._b0 = (np.asarray(initial, dtype=np.int64) if initial is not None
                    else initial_inventory(series, self.fleet_size))
        if (self._b0 < 0).any():
            raise ConfigurationError("initial inventory must be nonnegative")
        self.n_agents = grid.n_regions
        # Flow routing: destination region per (agent, direction), -1 absent.
        self._dest = grid.adjacency
        self.reset()

    def reset(self) -> np.ndarray:
        self.t = 0
        self.inventory = self._b0.copy()
        return self.inventory.copy()

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def state_features(self):
        return build_state(self.series, self.grid, self.inventory, self.t, self.state_cfg)

    def state_vector(self) -> np.ndarray:
        return self.state_features().vector(self.scales)

    def agent_slices(self) -> np.ndarray:
        return self.state_features().agent_slices(self.scales)

    def sanitize_joint(self, raw: np.ndarray) -> np.ndarray:
        acts = np.zeros((self.n_agents, 4), dtype=np.int64)
        for i in range(self.n_agents):
            acts[i] = sanitize_action(raw[i], i, int(self.inventory[i]),
                                      self.grid, self.cfg.max_move)
        return acts

    def step(self, raw_actions: np.ndarray) -> StepOutcome:
        """Sanitize, move, serve demand, apply drop-offs, score agents."""
        if self.done:
            raise ConfigurationError("episode already finished; call reset()")
        actions = self.sanitize_joint(np.asarray(raw_actions))

        inflow = np.zeros(self.n_agents, dtype=np.int64)
        for direction in range(4):
            dest = self._dest[:, direction]
            valid = dest >= 0
            np.add.at(inflow, dest[valid], actions[valid, direction])
        outflow = actions.sum(axis=1)

        pre_demand = self.inventory + inflow - outflow
        d_t = self.series.d[self.t]
        o_t = self.series.o[self.t]
        served = np.minimum(d_t, pre_demand)
        unmet = d_t - served
        inventory_next = pre_demand - served + o_t

        # vectorized form of reward(); kept elementwise-identical to it
        ratio = unmet / (d_t + self.cfg.epsilon)
        moved = outflow / self.cfg.max_move
        rewards = (self.cfg.service_weight * (1.0 - ratio)
                   - self.cfg.shortage_weight * ratio
                   - self.cfg.move_cost_weight * moved)

        outcome = StepOutcome(
            inventory_next=inventory_next,
            served=served,
            unmet=unmet,
            rewards=rewards,
            pre_demand_inventory=pre_demand,
            actions=actions,
            demand=d_t.copy(),
            dropoffs=o_t.copy(),
            t=self.t,
        )
        self.inventory = inventory_next
        self.t += 1
        return outcome


def avail_metric(outcomes: list[StepOutcome]) -> float:
    """Fraction of all pick-up requests served over the episode."""
    total_demand = sum(int(out.demand.sum()) for out in outcomes)
    total_unmet = sum(int(out.unmet.sum()) for out in outcomes)
    if total_demand == 0:
        log.warning("avail_metric over zero total demand; defining it as 1.0")
        return 1.0
    return 1.0 - total_unmet / total_demand


def total_rebalanced(outcomes: list[StepOutcome]) -> int:
    """Total units moved by all agents over the episode."""
    return int(sum(int(np.abs(out.actions).sum()) for out in outcomes))


def write_trace(outcomes: list[StepOutcome], path) -> None:
    """One JSON record per step, for debugging and metric recomputation."""
    with open(path, "w", encoding="utf-8") as fh:
        for out in outcomes:
            fh.write(json.dumps({
                "t": out.t,
                "pre_demand_inventory": out.pre_demand_inventory.tolist(),
                "inventory_next": out.inventory_next.tolist(),
                "actions": out.actions.tolist(),
                "served": out.served.tolist(),
                "unmet": out.unmet.tolist(),
                "demand": out.demand.tolist(),
                "dropoffs": out.dropoffs.tolist(),
                "rewards": [round(float(r), 10) for r in out.rewards],
            }) + "\n")
