"""Clipped PPO with GAE over the grouped actor-critic stack.

Rollouts run without the tape; updates rebuild the forward pass through
each agent's trunk/head/ID path so gradients from all members of a shared
network accumulate before its optimizer step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import models, nn
from .env import Environment
from .errors import ConfigurationError, TrainingError
from .grid import RegionGrid
from .groups import GroupTree


@dataclass
class TrainConfig:
    gamma: float = 0.995
    gae_lambda: float = 0.95
    lr_policy: float = 3e-4
    lr_value: float = 1e-3
    clip_ratio: float = 0.2
    epochs_per_update: int = 4
    minibatches: int = 4
    episodes_per_epoch: int = 64
    max_steps: int = 31
    entropy_coef: float = 0.01
    value_clip: float = 0.2
    seed: int = 0
    epochs: int = 10
    # Credit assignment for the policy gradient: each agent's training
    # reward is its own ("individual"), the fleet mean ("team"), or the
    # mean over itself and its lattice neighbors ("neighborhood"). The
    # cooperative variants reflect that relocation pays off at the
    # receiving region, not the sending one.
    reward_credit: str = "neighborhood"
    resample: bool = True
    val_fraction: float = 0.2
    encoder_kl_weight: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ConfigurationError("gae_lambda must lie in [0, 1]")
        if min(self.lr_policy, self.lr_value) <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.reward_credit not in ("individual", "team", "neighborhood"):
            raise ConfigurationError(f"unknown reward_credit {self.reward_credit!r}")


@dataclass
class RolloutBuffer:
    """Per-agent, per-step transitions from one episode."""

    states: np.ndarray       # [T, D] shared full state per step
    actions: np.ndarray      # [N, T, 4] sampled magnitudes (pre-projection)
    log_probs: np.ndarray    # [N, T]
    rewards: np.ndarray      # [N, T] credit-assigned training rewards
    raw_rewards: np.ndarray  # [N, T] the agents' own rewards
    values: np.ndarray       # [N, T]
    dones: np.ndarray        # [T] 1.0 on the terminal step

    @property
    def n_agents(self) -> int:
        return self.actions.shape[0]

    @property
    def n_steps(self) -> int:
        return self.actions.shape[1]


def credit_matrix(grid: RegionGrid, kind: str) -> np.ndarray:
    """Row-stochastic matrix mapping per-region rewards to training credit."""
    n = grid.n_regions
    if kind == "individual":
        return np.eye(n)
    if kind == "team":
        return np.full((n, n), 1.0 / n)
    mat = np.eye(n)
    for k in range(n):
        for d in range(4):
            j = grid.neighbor(k, d)
            if j >= 0:
                mat[k, j] = 1.0
    return mat / mat.sum(axis=1, keepdims=True)


def policy_outputs(tree: GroupTree, state_vec: np.ndarray,
                   n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward every agent through its trunk/head; returns (logits, values)."""
    n = tree.n_agents
    logits = np.empty((n, 4 * n_classes))
    values = np.empty(n)
    ids_value = np.zeros((n, models.ID_DIM)) if tree.ids_frozen else tree.ids["e"].value
    for gg in tree.globals:
        h = models.trunk_forward_np(gg.trunk, state_vec[None, :])
        for lid in sorted(gg.local_ids):
            members = tree.locals[lid].members
            hm = np.repeat(h, len(members), axis=0)
            lg, v = models.head_forward_np(tree.locals[lid].head, hm,
                                           ids_value[members])
            logits[members] = lg
            values[members] = v[:, 0]
    return logits, values


def agent_window_tuple(agent_slice: np.ndarray, action: np.ndarray,
                       raw_reward: float, n_classes: int,
                       reward_scale: float) -> np.ndarray:
    """One (local state, action, reward) tuple for the trajectory encoder."""
    return np.concatenate([
        agent_slice,
        action / max(1, n_classes - 1),
        [raw_reward * reward_scale],
    ])


def collect_rollout(env: Environment, tree: GroupTree, cfg: TrainConfig,
                    rng: np.random.Generator, history_window: int = 8):
    """Play one episode with sampled actions.

    Returns (buffer, outcomes, windows) where windows stacks each agent's
    last `history_window` encoder tuples, shape [N, W, F].
    """
    n_classes = models.magnitude_classes(env.cfg.max_move)
    credit = credit_matrix(env.grid, cfg.reward_credit)
    reward_scale = 1.0 / (env.cfg.service_weight + env.cfg.shortage_weight
                          + env.cfg.move_cost_weight)
    env.reset()
    n, horizon = env.n_agents, env.horizon

    states, tuples, outcomes = [], [], []
    actions = np.zeros((n, horizon, 4), dtype=np.int64)
    log_probs = np.zeros((n, horizon))
    rewards = np.zeros((n, horizon))
    raw_rewards = np.zeros((n, horizon))
    values = np.zeros((n, horizon))
    dones = np.zeros(horizon)

    while not env.done:
        t = env.t
        state_vec = env.state_vector()
        slices = env.agent_slices()
        logits, vals = policy_outputs(tree, state_vec, n_classes)
        acts, logp = models.sample_actions(rng, logits, n_classes)
        outcome = env.step(acts)

        states.append(state_vec)
        actions[:, t] = acts
        log_probs[:, t] = logp
        values[:, t] = vals
        raw_rewards[:, t] = outcome.rewards
        rewards[:, t] = credit @ outcome.rewards
        outcomes.append(outcome)
        tuples.append(np.stack([
            agent_window_tuple(slices[i], acts[i], outcome.rewards[i],
                               n_classes, reward_scale)
            for i in range(n)
        ]))
    dones[-1] = 1.0

    window = np.stack(tuples[-history_window:], axis=1)  # [N, W, F]
    buffer = RolloutBuffer(np.stack(states), actions, log_probs, rewards,
                           raw_rewards, values, dones)
    return buffer, outcomes, window


def compute_gae(rewards: np.ndarray, values: np.ndarray, bootstrap_value: float,
                gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Backward advantage recursion for one agent's reward/value sequence."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ConfigurationError("rewards/values length mismatch")
    n = rewards.shape[0]
    adv = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        next_value = bootstrap_value if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + values


def batched_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """GAE over all agents at once; the final step never bootstraps."""
    n, horizon = buffer.rewards.shape
    adv = np.zeros((n, horizon))
    running = np.zeros(n)
    for t in reversed(range(horizon)):
        nonterminal = 1.0 - buffer.dones[t]
        next_values = buffer.values[:, t + 1] if t + 1 < horizon else np.zeros(n)
        delta = (buffer.rewards[:, t] + gamma * next_values * nonterminal
                 - buffer.values[:, t])
        running = delta + gamma * lam * nonterminal * running
        adv[:, t] = running
    return adv, adv + buffer.values


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


def ppo_update(buffer: RolloutBuffer, tree: GroupTree, cfg: TrainConfig,
               rng: np.random.Generator, max_move: int) -> dict:
    """Several clipped-surrogate passes over shuffled minibatches.

    Trunks, heads' policy path, and ID embeddings step at the policy
    learning rate; each head's value output layer steps at the value
    rate. A shared network receives gradient from every one of its
    member agents' samples before its single Adam step per minibatch.
    """
    n_classes = models.magnitude_classes(max_move)
    adv_all, ret_all = batched_gae(buffer, cfg.gamma, cfg.gae_lambda)
    n, horizon = adv_all.shape
    agent_of = np.repeat(np.arange(n), horizon)
    step_of = np.tile(np.arange(horizon), n)
    flat = lambda arr: arr.reshape(n * horizon, *arr.shape[2:])
    acts_f, logp_f = flat(buffer.actions), flat(buffer.log_probs)
    adv_f, ret_f, val_f = flat(adv_all), flat(ret_all), flat(buffer.values)
    lid_of_agent = tree.agent_to_local()
    lr = {"policy": cfg.lr_policy, "value": cfg.lr_value}

    total = n * horizon
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "approx_kl": 0.0, "clip_fraction": 0.0}
    n_batches = 0

    for _ in range(cfg.epochs_per_update):
        order = rng.permutation(total)
        for chunk in np.array_split(order, cfg.minibatches):
            if chunk.size == 0:
                continue
            mb_agents, mb_steps = agent_of[chunk], step_of[chunk]
            mb_adv = normalize_advantages(adv_f[chunk])

            param_sets: list[nn.ParamSet] = []
            leaf_maps: list[tuple[nn.ParamSet, dict]] = []

            def leaves_for(ps: nn.ParamSet) -> dict:
                ps.zero_grad()
                leaves = ps.tensors()
                param_sets.append(ps)
                leaf_maps.append((ps, leaves))
                return leaves

            ids_leaves = None if tree.ids_frozen else leaves_for(tree.ids)

            policy_sum = value_sum = entropy_sum = None
            new_logp_data = np.empty(chunk.size)
            clipped_flags = np.empty(chunk.size, dtype=bool)

            for g_idx, gg in enumerate(tree.globals):
                member_mask = np.isin(mb_agents, np.concatenate(
                    [tree.locals[lid].members for lid in gg.local_ids]))
                if not member_mask.any():
                    continue
                # forward the trunk once per distinct step this group touches
                unique_steps, row_of = np.unique(
                    np.where(member_mask, mb_steps, -1), return_inverse=True)
                base = 1 if unique_steps[0] == -1 else 0
                trunk_leaves = leaves_for(gg.trunk)
                h_all = models.trunk_forward(trunk_leaves,
                                             ad.constant(buffer.states[unique_steps[base:]]))
                for lid in sorted(gg.local_ids):
                    pos = np.flatnonzero(np.isin(mb_agents, tree.locals[lid].members))
                    if pos.size == 0:
                        continue
                    head_leaves = leaves_for(tree.locals[lid].head)
                    h = ad.gather_rows(h_all, row_of[pos] - base)
                    if ids_leaves is None:
                        e = ad.constant(np.zeros((pos.size, models.ID_DIM)))
                    else:
                        e = ad.gather_rows(ids_leaves["e"], mb_agents[pos])
                    logits, v = models.head_forward(head_leaves, h, e)

                    sel = chunk[pos]
                    lp_new = models.action_log_prob(logits, acts_f[sel], n_classes)
                    ratio = ad.exp(ad.sub(lp_new, ad.constant(logp_f[sel])))
                    adv_t = ad.constant(mb_adv[pos])
                    clipped = ad.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
                    surrogate = ad.minimum(ad.mul(ratio, adv_t), ad.mul(clipped, adv_t))

                    v_flat = ad.narrow(v, 1, 0, 1)
                    v_old = ad.constant(val_f[sel][:, None])
                    targets = ad.constant(ret_f[sel][:, None])
                    v_clip = ad.add(v_old, ad.clip(ad.sub(v_flat, v_old),
                                                   -cfg.value_clip, cfg.value_clip))
                    v_err = ad.maximum(ad.square(ad.sub(v_flat, targets)),
                                       ad.square(ad.sub(v_clip, targets)))

                    ent = models.policy_entropy(logits, n_classes)

                    p_term = ad.tsum(surrogate)
                    v_term = ad.tsum(v_err)
                    e_term = ad.tsum(ent)
                    policy_sum = p_term if policy_sum is None else ad.add(policy_sum, p_term)
                    value_sum = v_term if value_sum is None else ad.add(value_sum, v_term)
                    entropy_sum = e_term if entropy_sum is None else ad.add(entropy_sum, e_term)

                    new_logp_data[pos] = lp_new.data
                    clipped_flags[pos] = np.abs(ratio.data - 1.0) > cfg.clip_ratio

            inv_b = 1.0 / chunk.size
            loss = ad.add(
                ad.add(ad.mul(policy_sum, -inv_b), ad.mul(value_sum, 0.5 * inv_b)),
                ad.mul(entropy_sum, -cfg.entropy_coef * inv_b))
            if not np.isfinite(loss.data):
                raise TrainingError(f"non-finite PPO loss: {loss.data!r}")
            loss.backward()
            for ps, leaves in leaf_maps:
                nn.collect_grads(ps, leaves)
            for ps in param_sets:
                nn.adam_update(ps, lr)

            stats["policy_loss"] += -float(policy_sum.data) * inv_b
            stats["value_loss"] += float(value_sum.data) * inv_b * 0.5
            stats["entropy"] += float(entropy_sum.data) * inv_b
            stats["approx_kl"] += float(np.mean(logp_f[chunk] - new_logp_data))
            stats["clip_fraction"] += float(np.mean(clipped_flags))
            n_batches += 1

    for key in stats:
        stats[key] /= max(1, n_batches)
    return stats
