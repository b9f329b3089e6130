"""Training loop: episode collection, PPO updates, regrouping, evaluation.

Scheme selection happens here. Baselines differ only in how the group
tree is built and whether the regrouping controller and ID embeddings
are active:

  hagps         full system: static-feature global groups, adaptive
                local split/merge, learnable ID embeddings
  no-share      one private trunk+head per agent
  share-all     a single trunk+head for everyone, no ID signal
  static-groups one-shot clustering of trajectory embeddings after the
                first epoch, never regrouped, no ID signal

hagps ablation flags: no_id (zeroed, frozen ID table), no_splitmerge
(controller off), no_hier (single global group), no_arp (fixed period).
"""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import models, nn, ppo
from .controller import ControllerConfig, ControllerState, regroup_tick
from .demand import DemandSeries, resample_series
from .env import Environment, EnvConfig, avail_metric, total_rebalanced
from .errors import ConfigurationError
from .features import StateConfig, agent_slice_dim, state_dim
from .grid import RegionGrid
from .groups import GroupTree, kmeans
from .ppo import TrainConfig

log = logging.getLogger(__name__)

MODES = ("hagps", "no-share", "share-all", "static-groups")

STATIC_CLUSTER_COUNT = 4  # one-shot cluster count for the static-groups proxy


def rng_for(master_seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible stream derived from the master seed."""
    tag = zlib.crc32(label.encode())
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([master_seed, tag])))


@dataclass
class Ablations:
    no_id: bool = False
    no_splitmerge: bool = False
    no_hier: bool = False
    no_arp: bool = False

    def any_active(self) -> bool:
        return self.no_id or self.no_splitmerge or self.no_hier or self.no_arp


def build_tree(mode: str, grid: RegionGrid, dim_state: int, max_move: int,
               slice_dim: int, ctrl: ControllerConfig, ablations: Ablations,
               seed: int) -> tuple[GroupTree, ControllerConfig]:
    """Allocate trunks/heads/ID table/encoder for the chosen scheme.

    Every component initializes from its own named substream, so schemes
    that share structure (for example hagps restricted to one group vs
    share-all) start from identical weights under one seed.
    """
    if mode not in MODES:
        raise ConfigurationError(f"unknown mode {mode!r}")
    if mode != "hagps" and ablations.any_active():
        raise ConfigurationError("ablation flags are only valid with mode=hagps")

    n = grid.n_regions
    ids_frozen = mode != "hagps" or ablations.no_id
    ids = models.make_id_table(rng_for(seed, "init/ids"), n)
    if ids_frozen:
        ids["e"].value[...] = 0.0

    tuple_dim = slice_dim + 4 + 1
    needs_encoder = mode in ("hagps", "static-groups")
    encoder_ps = (enc.make_encoder(rng_for(seed, "init/encoder"), tuple_dim)
                  if needs_encoder else None)
    tree = GroupTree(n, ids, ids_frozen=ids_frozen, encoder=encoder_ps)

    def new_trunk(index: int):
        return models.make_trunk(rng_for(seed, f"init/trunk/{index}"), dim_state)

    def new_head(index: int):
        return models.make_head(rng_for(seed, f"init/head/{index}"), max_move)

    if mode == "no-share":
        for i in range(n):
            g = tree.add_global(new_trunk(i))
            tree.add_local(g, new_head(i), [i])
        ctrl = ControllerConfig(**{**ctrl.__dict__, "enabled": False})
        return tree, ctrl

    if mode in ("share-all", "static-groups"):
        g = tree.add_global(new_trunk(0))
        tree.add_local(g, new_head(0), list(range(n)))
        ctrl = ControllerConfig(**{**ctrl.__dict__, "enabled": False})
        return tree, ctrl

    # hagps: global groups cluster regions by their static urban features.
    n_global = 1 if ablations.no_hier else min(ctrl.initial_global_groups,
                                               ctrl.max_global_groups, n)
    if n_global > 1:
        feats = grid.static_features.astype(np.float64)
        scale = np.maximum(1.0, feats.max(axis=0))
        labels, _ = kmeans(feats / scale, n_global, rng_for(seed, "init/globals"))
    else:
        labels = np.zeros(n, dtype=np.int64)
    for g in range(n_global):
        idx = tree.add_global(new_trunk(g))
        members = [int(i) for i in np.flatnonzero(labels == g)]
        tree.add_local(idx, new_head(g), members)

    overrides = {}
    if ablations.no_splitmerge:
        overrides["enabled"] = False
    if ablations.no_arp:
        overrides["adaptive_period"] = False
    if overrides:
        ctrl = ControllerConfig(**{**ctrl.__dict__, **overrides})
    return tree, ctrl


def encode_all_agents(tree: GroupTree, windows: np.ndarray) -> dict[int, enc.GaussianEmbedding]:
    means, logvars = enc.encode_batch(tree.encoder, windows)
    return {i: enc.GaussianEmbedding(means[i], logvars[i]) for i in range(windows.shape[0])}


def one_shot_cluster(tree: GroupTree, embeddings, n_clusters: int,
                     rng: np.random.Generator) -> None:
    """Collapse-free split of the single starting group into fixed clusters."""
    (lid,) = tree.local_ids_sorted()
    group = tree.locals[lid]
    members = sorted(group.members)
    k = min(n_clusters, len(members))
    if k < 2:
        return
    points = np.stack([embeddings[m].mean for m in members])
    labels, _ = kmeans(points, k, rng)
    head, global_idx = group.head, group.global_idx
    tree.remove_local(lid)
    for j in range(k):
        cluster = [m for m, lab in zip(members, labels) if lab == j]
        tree.add_local(global_idx, nn.clone_params(head), cluster)
    tree.validate()


def greedy_episode(tree: GroupTree, env: Environment) -> dict:
    """Deterministic evaluation: per-direction argmax actions."""
    n_classes = models.magnitude_classes(env.cfg.max_move)
    env.reset()
    outcomes = []
    while not env.done:
        logits, _ = ppo.policy_outputs(tree, env.state_vector(), n_classes)
        outcomes.append(env.step(models.greedy_actions(logits, n_classes)))
    return {
        "service_ratio": avail_metric(outcomes),
        "total_rebalanced": total_rebalanced(outcomes),
        "mean_reward": float(np.mean([out.rewards.mean() for out in outcomes])),
        "outcomes": outcomes,
    }


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    tree: GroupTree = None
    controller_state: ControllerState = None
    final_eval: dict = field(default_factory=dict)


HISTORY_FIELDS = (
    "epoch", "episodes", "train_service_ratio", "train_rebalanced",
    "train_mean_reward", "val_service_ratio", "val_rebalanced",
    "greedy_service_ratio", "greedy_rebalanced", "local_groups",
    "global_groups", "regroup_period", "running_divergence",
    "policy_loss", "value_loss", "entropy", "approx_kl", "clip_fraction",
    "encoder_loss",
)


def train(grid: RegionGrid, series: DemandSeries, env_cfg: EnvConfig,
          train_cfg: TrainConfig, ctrl_cfg: ControllerConfig,
          state_cfg: StateConfig, mode: str = "hagps",
          ablations: Ablations | None = None,
          on_epoch=None) -> TrainResult:
    """Run the full training protocol and return metrics plus the model.

    Everything stochastic derives from train_cfg.seed through named
    substreams, so a fixed seed reproduces the metric history exactly.
    """
    ablations = ablations or Ablations()
    seed = train_cfg.seed
    action_rng = rng_for(seed, "actions")
    shuffle_rng = rng_for(seed, "shuffle")
    ctrl_rng = rng_for(seed, "controller")
    encoder_rng = rng_for(seed, "encoder")
    resample_rng = rng_for(seed, "resample-train")
    val_rng = rng_for(seed, "resample-val")

    dim_state = state_dim(grid.n_regions, state_cfg)
    slice_dim = agent_slice_dim(state_cfg)
    tree, ctrl_cfg = build_tree(mode, grid, dim_state, env_cfg.max_move,
                                slice_dim, ctrl_cfg, ablations, seed)
    ctrl_state = ControllerState(period=ctrl_cfg.base_period)

    controller_active = mode == "hagps" and ctrl_cfg.enabled
    encoder_active = tree.encoder is not None
    n_val = max(1, round(train_cfg.val_fraction * train_cfg.episodes_per_epoch))

    def make_env(episode_series: DemandSeries) -> Environment:
        return Environment(grid, episode_series, env_cfg, state_cfg)

    result = TrainResult(tree=tree, controller_state=ctrl_state)
    episodes_done = 0
    for epoch in range(train_cfg.epochs):
        ep_ratios, ep_moved, ep_rewards = [], [], []
        stats = {}
        enc_loss = 0.0
        for _ in range(train_cfg.episodes_per_epoch):
            episode_series = (resample_series(series, resample_rng)
                              if train_cfg.resample else series)
            env = make_env(episode_series)
            buffer, outcomes, windows = ppo.collect_rollout(
                env, tree, train_cfg, action_rng, state_cfg.history_window)
            stats = ppo.ppo_update(buffer, tree, train_cfg, shuffle_rng,
                                   env_cfg.max_move)
            if encoder_active and (mode == "hagps" or epoch == 0):
                enc_loss = enc.encoder_train_step(
                    tree.encoder, windows, encoder_rng, train_cfg.lr_policy,
                    train_cfg.encoder_kl_weight)
            if controller_active:
                embeddings = encode_all_agents(tree, windows)
                regroup_tick(tree, ctrl_cfg, ctrl_state, embeddings, ctrl_rng,
                             episode=episodes_done)
            episodes_done += 1

            ep_ratios.append(avail_metric(outcomes))
            ep_moved.append(total_rebalanced(outcomes))
            ep_rewards.append(float(buffer.raw_rewards.mean()))

            if (mode == "static-groups" and epoch == 0
                    and episodes_done == train_cfg.episodes_per_epoch):
                embeddings = encode_all_agents(tree, windows)
                one_shot_cluster(tree, embeddings, STATIC_CLUSTER_COUNT, ctrl_rng)

        val_ratios, val_moved = [], []
        for _ in range(n_val):
            episode_series = (resample_series(series, val_rng)
                              if train_cfg.resample else series)
            evaluation = greedy_episode(tree, make_env(episode_series))
            val_ratios.append(evaluation["service_ratio"])
            val_moved.append(evaluation["total_rebalanced"])
        greedy = greedy_episode(tree, make_env(series))

        row = {
            "epoch": epoch,
            "episodes": episodes_done,
            "train_service_ratio": float(np.mean(ep_ratios)),
            "train_rebalanced": float(np.mean(ep_moved)),
            "train_mean_reward": float(np.mean(ep_rewards)),
            "val_service_ratio": float(np.mean(val_ratios)),
            "val_rebalanced": float(np.mean(val_moved)),
            "greedy_service_ratio": greedy["service_ratio"],
            "greedy_rebalanced": greedy["total_rebalanced"],
            "local_groups": tree.local_count,
            "global_groups": tree.global_count,
            "regroup_period": ctrl_state.period,
            "running_divergence": ctrl_state.running_divergence,
            "policy_loss": stats.get("policy_loss", 0.0),
            "value_loss": stats.get("value_loss", 0.0),
            "entropy": stats.get("entropy", 0.0),
            "approx_kl": stats.get("approx_kl", 0.0),
            "clip_fraction": stats.get("clip_fraction", 0.0),
            "encoder_loss": enc_loss,
        }
        result.history.append(row)
        log.info("epoch %d: greedy service %.3f, %d local groups, period %d",
                 epoch, greedy["service_ratio"], tree.local_count, ctrl_state.period)
        if on_epoch is not None:
            on_epoch(epoch, row, tree, ctrl_state)

    final = greedy_episode(tree, make_env(series))
    final.pop("outcomes")
    result.final_eval = final
    return result
