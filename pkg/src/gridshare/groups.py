"""Two-level agent grouping with shared parameters.

Global groups own a feature trunk shared by every member agent; each
global group is partitioned into local groups, each owning a compact
actor-critic head. Agents keep individual ID embeddings regardless of
grouping. Splitting and merging operate on local groups only, driven by
the divergence of the agents' trajectory embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .encoder import GaussianEmbedding
from .errors import ConfigurationError


# -- divergences over diagonal Gaussians ---------------------------------

def gaussian_kl(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Closed-form KL(p || q) between diagonal Gaussians."""
    if p.mean.shape != q.mean.shape:
        raise ConfigurationError("embedding dimension mismatch")
    var_ratio = np.exp(p.logvar - q.logvar)
    mean_term = (q.mean - p.mean) ** 2 / np.exp(q.logvar)
    return float(0.5 * np.sum(var_ratio + mean_term - 1.0 + (q.logvar - p.logvar)))


def symmetrized_kl(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Half the sum of both KL directions (used for within-group spread)."""
    return 0.5 * (gaussian_kl(p, q) + gaussian_kl(q, p))


def merge_affinity(p: GaussianEmbedding, q: GaussianEmbedding) -> float:
    """Unhalved two-way KL sum compared against the merge threshold."""
    return gaussian_kl(p, q) + gaussian_kl(q, p)


def centroid(embeddings: list[GaussianEmbedding]) -> GaussianEmbedding:
    """Moment-averaged Gaussian: mean of means, mean of variances."""
    if not embeddings:
        raise ConfigurationError("centroid of an empty group")
    means = np.stack([e.mean for e in embeddings])
    variances = np.stack([e.var for e in embeddings])
    return GaussianEmbedding(means.mean(axis=0), np.log(variances.mean(axis=0)))


def intra_divergence(embeddings: list[GaussianEmbedding]) -> float:
    """Average symmetrized KL between members and their centroid."""
    if not embeddings:
        raise ConfigurationError("divergence of an empty group")
    if len(embeddings) == 1:
        return 0.0
    mu = centroid(embeddings)
    return float(np.mean([symmetrized_kl(e, mu) for e in embeddings]))


# -- deterministic k-means -------------------------------------------------

def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with distance-weighted seeding; deterministic
    given the generator state.

    Empty clusters are repaired by stealing the point farthest from its
    center out of the largest cluster. Iteration stops at an assignment
    fixpoint or after max_iter rounds. Returns (labels, centers).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < k:
        raise ConfigurationError(f"k-means needs at least {k} points, got {n}")

    centers = np.empty((k, points.shape[1]))
    chosen = [int(rng.integers(n))]
    centers[0] = points[chosen[0]]
    for j in range(1, k):
        dist_sq = np.min(((points[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2), axis=1)
        total = dist_sq.sum()
        if total <= 0.0:
            # all remaining points coincide with chosen centers
            remaining = [i for i in range(n) if i not in chosen]
            pick = remaining[int(rng.integers(len(remaining)))]
        else:
            pick = int(rng.choice(n, p=dist_sq / total))
        chosen.append(pick)
        centers[j] = points[pick]

    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        dists = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dists.argmin(axis=1)
        for j in range(k):
            if not (new_labels == j).any():
                sizes = np.bincount(new_labels, minlength=k)
                donor = int(sizes.argmax())
                donor_points = np.flatnonzero(new_labels == donor)
                far = donor_points[dists[donor_points, donor].argmax()]
                new_labels[far] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            centers[j] = points[labels == j].mean(axis=0)
    return labels, centers


# -- the tree ---------------------------------------------------------------

@dataclass
class LocalGroup:
    head: nn.ParamSet
    members: list[int]
    global_idx: int


@dataclass
class GlobalGroup:
    trunk: nn.ParamSet
    local_ids: list[int] = field(default_factory=list)


class GroupTree:
    """Hierarchical parameter store: trunks, heads, agent ID table, encoder."""

    def __init__(self, n_agents: int, ids: nn.ParamSet, ids_frozen: bool = False,
                 encoder: nn.ParamSet | None = None):
        self.n_agents = n_agents
        self.globals: list[GlobalGroup] = []
        self.locals: dict[int, LocalGroup] = {}
        self.ids = ids
        self.ids_frozen = ids_frozen
        self.encoder = encoder
        self._next_local_id = 0

    # -- construction/maintenance ----------------------------------------
    def add_global(self, trunk: nn.ParamSet) -> int:
        self.globals.append(GlobalGroup(trunk))
        return len(self.globals) - 1

    def add_local(self, global_idx: int, head: nn.ParamSet, members: list[int]) -> int:
        if not members:
            raise ConfigurationError("local groups must be nonempty")
        lid = self._next_local_id
        self._next_local_id += 1
        self.locals[lid] = LocalGroup(head, sorted(members), global_idx)
        self.globals[global_idx].local_ids.append(lid)
        return lid

    def remove_local(self, lid: int) -> None:
        group = self.locals.pop(lid)
        self.globals[group.global_idx].local_ids.remove(lid)

    # -- lookups -----------------------------------------------------------
    @property
    def local_count(self) -> int:
        return len(self.locals)

    @property
    def global_count(self) -> int:
        return len(self.globals)

    def local_ids_sorted(self) -> list[int]:
        return sorted(self.locals.keys())

    def agent_to_local(self) -> np.ndarray:
        out = np.full(self.n_agents, -1, dtype=np.int64)
        for lid, grp in self.locals.items():
            out[grp.members] = lid
        return out

    def assignment(self, agent: int) -> tuple[int, int]:
        for lid, grp in self.locals.items():
            if agent in grp.members:
                return grp.global_idx, lid
        raise ConfigurationError(f"agent {agent} is unassigned")

    def head_param_total(self) -> int:
        return sum(grp.head.n_values() for grp in self.locals.values())

    def validate(self, max_global: int | None = None, max_local: int | None = None) -> None:
        """Partition and budget invariants; raises on violation."""
        seen = np.zeros(self.n_agents, dtype=np.int64)
        for lid, grp in self.locals.items():
            if not grp.members:
                raise ConfigurationError(f"local group {lid} is empty")
            if lid not in self.globals[grp.global_idx].local_ids:
                raise ConfigurationError(f"local group {lid} missing from its global group")
            for m in grp.members:
                seen[m] += 1
        if not (seen == 1).all():
            raise ConfigurationError("agents must belong to exactly one local group")
        for g, grp in enumerate(self.globals):
            if not grp.local_ids:
                raise ConfigurationError(f"global group {g} is empty")
        if max_global is not None and self.global_count > max_global:
            raise ConfigurationError("global group budget exceeded")
        if max_local is not None and self.local_count > max_local:
            raise ConfigurationError("local group budget exceeded")


# -- split / merge -----------------------------------------------------------

def try_split(tree: GroupTree, lid: int, embeddings: dict[int, GaussianEmbedding],
              split_threshold: float, min_split_size: int, max_local_groups: int,
              rng: np.random.Generator,
              max_subgroups: int = 2) -> tuple[int, ...] | None:
    """Bisect one local group when its members' embeddings have drifted apart.

    Requires divergence above threshold, more than min_split_size members,
    and room under the local-group budget. Both children start from
    copies of the parent head. With max_subgroups > 2 the members are
    re-clustered into up to that many children, budget permitting.
    Returns the new group ids, or None when ineligible.
    """
    group = tree.locals[lid]
    members = sorted(group.members)
    if len(members) <= min_split_size:
        return None
    if tree.local_count >= max_local_groups:
        return None
    divergence = intra_divergence([embeddings[m] for m in members])
    if divergence <= split_threshold:
        return None

    n_children = min(max(2, max_subgroups), len(members),
                     max_local_groups - tree.local_count + 1)
    points = np.stack([embeddings[m].mean for m in members])
    labels, _ = kmeans(points, n_children, rng)

    parent_head = group.head
    global_idx = group.global_idx
    tree.remove_local(lid)
    new_ids = []
    for j in range(n_children):
        child_members = [m for m, lab in zip(members, labels) if lab == j]
        new_ids.append(tree.add_local(global_idx, nn.clone_params(parent_head), child_members))
    return tuple(new_ids)


def try_merge(tree: GroupTree, lid_a: int, lid_b: int,
              embeddings: dict[int, GaussianEmbedding],
              merge_threshold: float) -> int | None:
    """Fuse two local groups of the same global group when their centroid
    distributions are close (two-way KL sum under the threshold).

    The larger group's head survives (ties keep the lower id); the union
    of members is then redistributed to the nearest surviving centroid
    within the global group. Returns the surviving id, or None.
    """
    a, b = tree.locals[lid_a], tree.locals[lid_b]
    if a.global_idx != b.global_idx:
        raise ConfigurationError("can only merge local groups of one global group")
    cent_a = centroid([embeddings[m] for m in a.members])
    cent_b = centroid([embeddings[m] for m in b.members])
    if merge_affinity(cent_a, cent_b) >= merge_threshold:
        return None

    if len(a.members) > len(b.members):
        keep, drop = lid_a, lid_b
    elif len(b.members) > len(a.members):
        keep, drop = lid_b, lid_a
    else:
        keep, drop = min(lid_a, lid_b), max(lid_a, lid_b)

    union = sorted(tree.locals[keep].members + tree.locals[drop].members)
    tree.locals[keep].members = union
    tree.remove_local(drop)

    # Reassign the union to the nearest surviving centroid in this global
    # group; fall back to the merged group if it would end up empty.
    global_idx = tree.locals[keep].global_idx
    sibling_ids = sorted(tree.globals[global_idx].local_ids)
    cents = {lid: centroid([embeddings[m] for m in tree.locals[lid].members])
             for lid in sibling_ids}
    new_home = {}
    for m in union:
        dists = [(float(((embeddings[m].mean - cents[lid].mean) ** 2).sum()), lid)
                 for lid in sibling_ids]
        new_home[m] = min(dists)[1]
    if any(home == keep for home in new_home.values()):
        for m, home in new_home.items():
            if home != keep:
                tree.locals[keep].members.remove(m)
                tree.locals[home].members.append(m)
                tree.locals[home].members.sort()
    return keep
