"""Markov-game dynamics: projection, flows, rewards, metrics, conservation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridshare.demand import DemandSeries
from gridshare.env import (Environment, EnvConfig, avail_metric, initial_inventory,
                           net_inflow, reward, sanitize_action, total_rebalanced,
                           write_trace)
from gridshare.errors import ConfigurationError
from gridshare.grid import EAST, NORTH, SOUTH, WEST, build_grid

from test_grid import km_box
from _oracles import reward_scalar


def make_grid(lat_km=2.0, lon_km=2.0):
    return build_grid(km_box(lat_km, lon_km), 1.0)


# -- initial inventory -----------------------------------------------------

def series_from_totals(totals, days=2):
    totals = np.asarray(totals)
    d = np.tile(totals, (days, 1))
    return DemandSeries(d, d.copy())


def test_initial_inventory_exact_proportional():
    series = series_from_totals([10, 30])
    assert initial_inventory(series, 4).tolist() == [1, 3]


def test_initial_inventory_uniform_fallback():
    series = DemandSeries(np.zeros((3, 2)), np.zeros((3, 2)))
    assert initial_inventory(series, 4).tolist() == [2, 2]


def test_initial_inventory_largest_remainder():
    series = series_from_totals([1, 1, 1])
    out = initial_inventory(series, 2)
    assert out.tolist() == [1, 1, 0]


def test_initial_inventory_bounds_property():
    rng = np.random.default_rng(0)
    for _ in range(100):
        k = int(rng.integers(1, 8))
        fleet = int(rng.integers(0, 40))
        totals = rng.integers(0, 20, size=k)
        series = series_from_totals(totals)
        out = initial_inventory(series, fleet)
        assert out.sum() == fleet and (out >= 0).all()
        ref = totals if totals.sum() > 0 else np.ones(k)
        quotas = fleet * ref / ref.sum()
        assert (out >= np.floor(quotas)).all() and (out <= np.ceil(quotas)).all()


# -- action sanitization ----------------------------------------------------

def test_sanitize_zero_action_unchanged():
    g = make_grid(3.0, 3.0)
    out = sanitize_action(np.zeros(4), 4, on_hand=10, grid=g, max_move=20)
    assert out.tolist() == [0, 0, 0, 0]


def test_sanitize_caps_at_max_move():
    g = make_grid(3.0, 3.0)
    out = sanitize_action(np.array([21, 0, 0, 0]), 4, on_hand=50, grid=g, max_move=20)
    assert out.tolist() == [20, 0, 0, 0]


def test_sanitize_zeroes_absent_directions():
    g = make_grid(2.0, 2.0)
    # region 0 is the south-west corner: no south, no west neighbor
    out = sanitize_action(np.array([3, 5, 2, 7]), 0, on_hand=50, grid=g, max_move=20)
    assert out.tolist() == [3, 0, 2, 0]


def test_sanitize_inventory_cap_is_proportional_and_maximal():
    g = make_grid(3.0, 3.0)
    out = sanitize_action(np.array([3, 3, 0, 0]), 4, on_hand=4, grid=g, max_move=10)
    assert out.tolist() == [2, 2, 0, 0]
    out = sanitize_action(np.array([3, 3, 0, 0]), 4, on_hand=5, grid=g, max_move=10)
    assert out.tolist() == [3, 2, 0, 0]  # slack goes to the north entry first


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(min_value=0, max_value=40), min_size=4, max_size=4),
       st.integers(min_value=0, max_value=30), st.integers(min_value=1, max_value=25),
       st.integers(min_value=0, max_value=8))
def test_sanitize_properties(raw, on_hand, max_move, region):
    g = make_grid(3.0, 3.0)
    raw = np.asarray(raw)
    out = sanitize_action(raw, region, on_hand, g, max_move)
    present = g.adjacency[region] >= 0
    assert (out >= 0).all() and (out <= raw).all()
    assert (out[~present] == 0).all()
    assert out.sum() <= min(max_move, on_hand)
    # the projection is maximal: it moves as much as the caps allow
    feasible_total = min(int(raw[present].sum()), max_move, on_hand)
    assert out.sum() == feasible_total


# -- net inflow --------------------------------------------------------------

def test_net_inflow_no_actions_zero():
    g = make_grid(2.0, 2.0)
    actions = np.zeros((4, 4), dtype=np.int64)
    assert all(net_inflow(actions, k, g) == 0 for k in range(4))


def test_net_inflow_arithmetic():
    g = make_grid(2.0, 2.0)
    actions = np.zeros((4, 4), dtype=np.int64)
    # region 2 (row 1, col 0) ships 2 south to region 0; region 0 ships 1 east.
    actions[2, SOUTH] = 2
    actions[0, EAST] = 1
    assert net_inflow(actions, 0, g) == 1
    assert net_inflow(actions, 2, g) == -2
    assert net_inflow(actions, 1, g) == 1


def test_net_inflow_ring_cancels():
    g = make_grid(2.0, 2.0)
    c = 3
    actions = np.zeros((4, 4), dtype=np.int64)
    actions[0, EAST] = c   # 0 -> 1
    actions[1, NORTH] = c  # 1 -> 3
    actions[3, WEST] = c   # 3 -> 2
    actions[2, SOUTH] = c  # 2 -> 0
    for k in range(4):
        assert net_inflow(actions, k, g) == 0


def test_net_inflow_conservation_random():
    rng = np.random.default_rng(11)
    g = make_grid(3.0, 3.0)
    for _ in range(200):
        raw = rng.integers(0, 7, size=(9, 4))
        acts = np.stack([sanitize_action(raw[i], i, 100, g, 20) for i in range(9)])
        assert sum(net_inflow(acts, k, g) for k in range(9)) == 0


# -- step dynamics ------------------------------------------------------------

def two_region_env(d, o, initial, **cfg_kw):
    g = build_grid(km_box(1.0, 2.0), 1.0)
    series = DemandSeries(np.asarray(d), np.asarray(o))
    cfg = EnvConfig(fleet_size=int(np.sum(initial)), max_steps=len(d), **cfg_kw)
    return Environment(g, series, cfg, initial=np.asarray(initial))


def test_step_basic_arithmetic():
    # region 0 holds 5, receives 2 from region 1, faces demand 4, drop-off 1
    env = two_region_env(d=[[4, 0]], o=[[1, 0]], initial=[5, 9])
    raw = np.zeros((2, 4), dtype=np.int64)
    raw[1, WEST] = 2
    out = env.step(raw)
    assert out.pre_demand_inventory[0] == 7
    assert out.served[0] == 4 and out.unmet[0] == 0
    assert out.inventory_next[0] == 4


def test_step_truncation_keeps_dropoffs():
    env = two_region_env(d=[[5, 0]], o=[[2, 0]], initial=[1, 0])
    out = env.step(np.zeros((2, 4), dtype=np.int64))
    assert out.served[0] == 1 and out.unmet[0] == 4
    assert out.inventory_next[0] == 2


def test_step_random_instances_conserve_and_stay_nonnegative():
    rng = np.random.default_rng(23)
    g = make_grid(3.0, 3.0)
    for _ in range(300):
        k = g.n_regions
        d = rng.integers(0, 9, size=(1, k))
        o = rng.integers(0, 9, size=(1, k))
        initial = rng.integers(0, 12, size=k)
        cfg = EnvConfig(fleet_size=int(initial.sum()), max_steps=1)
        env = Environment(g, DemandSeries(d, o), cfg, initial=initial)
        raw = rng.integers(0, 9, size=(k, 4))
        out = env.step(raw)
        assert (out.inventory_next >= 0).all()
        assert (out.pre_demand_inventory >= 0).all()
        assert np.array_equal(out.served + out.unmet, d[0])
        assert (out.served <= out.pre_demand_inventory).all()
        # fleet conservation: next total = previous + dropoffs - served
        assert out.inventory_next.sum() == initial.sum() - out.served.sum() + o[0].sum()


def test_step_after_done_rejected():
    env = two_region_env(d=[[0, 0]], o=[[0, 0]], initial=[1, 1])
    env.step(np.zeros((2, 4)))
    assert env.done
    with pytest.raises(ConfigurationError):
        env.step(np.zeros((2, 4)))


# -- reward -------------------------------------------------------------------

CFG = EnvConfig(service_weight=3.0, shortage_weight=5.0, move_cost_weight=15.0,
                max_move=20, fleet_size=10)


def test_env_config_validation():
    with pytest.raises(ConfigurationError):
        EnvConfig(service_weight=0.0)
    with pytest.raises(ConfigurationError):
        EnvConfig(max_move=0)
    with pytest.raises(ConfigurationError):
        EnvConfig(fleet_size=-1)


def test_reward_perfect_service_no_moves():
    assert reward(0.0, 12.0, np.zeros(4), CFG) == pytest.approx(3.0, abs=1e-6)


def test_reward_worst_case():
    act = np.array([20, 0, 0, 0])
    val = reward(10.0, 10.0, act, CFG)
    assert val == pytest.approx(-5.0 - 15.0, abs=1e-5)


def test_reward_matches_scalar_oracle_on_spec_point():
    cfg = EnvConfig(service_weight=3.0, shortage_weight=5.0, move_cost_weight=15.0,
                    max_move=20, fleet_size=10)
    act = np.array([2, 2, 0, 0])
    got = reward(3.0, 10.0, act, cfg)
    want = reward_scalar(3.0, 10.0, 4.0, 3.0, 5.0, 15.0, 20, cfg.epsilon)
    assert got == pytest.approx(want, abs=1e-12)
    assert got == pytest.approx(-2.4, abs=1e-5)


def test_reward_monotonicity_and_bounds():
    rng = np.random.default_rng(3)
    for _ in range(200):
        d = float(rng.integers(1, 20))
        u1, u2 = sorted(rng.uniform(0, d, size=2))
        a_small = np.array([rng.integers(0, 3), 0, 0, 0])
        a_big = a_small + np.array([0, rng.integers(1, 5), 0, 0])
        r_small_u = reward(u1, d, a_small, CFG)
        r_big_u = reward(u2, d, a_small, CFG)
        assert r_big_u <= r_small_u + 1e-12
        assert reward(u1, d, a_big, CFG) <= reward(u1, d, a_small, CFG) + 1e-12
        assert -CFG.shortage_weight - CFG.move_cost_weight - 1e-9 <= r_small_u <= CFG.service_weight + 1e-9


# -- episode metrics -----------------------------------------------------------

def run_episode(env, policy=None):
    outs = []
    env.reset()
    while not env.done:
        raw = np.zeros((env.n_agents, 4), dtype=np.int64) if policy is None else policy(env)
        outs.append(env.step(raw))
    return outs


def test_avail_metric_extremes_and_ratio():
    env = two_region_env(d=[[10, 0]], o=[[0, 0]], initial=[10, 0])
    outs = run_episode(env)
    assert avail_metric(outs) == 1.0

    env = two_region_env(d=[[10, 0]], o=[[0, 0]], initial=[0, 0])
    outs = run_episode(env)
    assert avail_metric(outs) == 0.0

    env = two_region_env(d=[[10, 0], [10, 0]], o=[[0, 0], [0, 0]], initial=[14, 0])
    outs = run_episode(env)
    assert avail_metric(outs) == pytest.approx(0.7)


def test_avail_metric_zero_demand_warns(caplog):
    env = two_region_env(d=[[0, 0]], o=[[0, 0]], initial=[1, 0])
    outs = run_episode(env)
    with caplog.at_level("WARNING"):
        assert avail_metric(outs) == 1.0
    assert any("zero total demand" in rec.message for rec in caplog.records)


def test_avail_metric_permutation_invariance():
    rng = np.random.default_rng(9)
    g = make_grid(3.0, 3.0)
    k = g.n_regions
    d = rng.integers(0, 9, size=(3, k))
    o = rng.integers(0, 9, size=(3, k))
    initial = rng.integers(0, 6, size=k)
    env = Environment(g, DemandSeries(d, o), EnvConfig(fleet_size=int(initial.sum()), max_steps=3),
                      initial=initial)
    outs = run_episode(env)
    base = avail_metric(outs)
    perm = rng.permutation(k)
    for out in outs:
        out.demand = out.demand[perm]
        out.unmet = out.unmet[perm]
    assert avail_metric(outs) == pytest.approx(base, abs=1e-15)


def test_total_rebalanced():
    env = two_region_env(d=[[0, 0], [0, 0]], o=[[0, 0], [0, 0]], initial=[5, 5])

    def ship_once(e):
        raw = np.zeros((2, 4), dtype=np.int64)
        if e.t == 0:
            raw[0, EAST] = 3
        return raw

    outs = run_episode(env, ship_once)
    assert total_rebalanced(outs) == 3
    assert total_rebalanced(run_episode(env)) == 0


def test_trace_roundtrip_recomputes_metric(tmp_path):
    rng = np.random.default_rng(31)
    g = make_grid(2.0, 2.0)
    d = rng.integers(0, 6, size=(4, 4))
    o = rng.integers(0, 6, size=(4, 4))
    env = Environment(g, DemandSeries(d, o), EnvConfig(fleet_size=10, max_steps=4))
    outs = run_episode(env, lambda e: rng.integers(0, 4, size=(4, 4)))
    path = tmp_path / "trace.jsonl"
    write_trace(outs, path)
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(records) == 4
    total_d = sum(sum(r["demand"]) for r in records)
    total_u = sum(sum(r["unmet"]) for r in records)
    assert 1.0 - total_u / total_d == pytest.approx(avail_metric(outs))
