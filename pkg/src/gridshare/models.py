"""Actor-critic building blocks: feature trunks, group heads, agent ID table.

A trunk maps the full environment state to a 64-d feature embedding and is
shared by every agent of one global group. A head maps (embedding, agent ID
vector) to four categorical distributions over per-direction move magnitudes
plus a state-value estimate, and is shared within one local group.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn

TRUNK_HIDDEN = 128
TRUNK_OUT = 64
HEAD_HIDDEN = 128
ID_DIM = 8


def magnitude_classes(max_move: int) -> int:
    """Per-direction magnitudes are {0..floor(max_move/4)}; four directions
    together can never exceed the per-step relocation cap."""
    return max_move // 4 + 1


def make_trunk(rng: np.random.Generator, state_dim: int) -> nn.ParamSet:
    ps = nn.ParamSet()
    nn.add_dense(ps, rng, "l1", state_dim, TRUNK_HIDDEN)
    nn.add_dense(ps, rng, "l2", TRUNK_HIDDEN, TRUNK_OUT)
    return ps


def trunk_forward(leaves: dict[str, ad.Tensor], states) -> ad.Tensor:
    return nn.mlp_forward(leaves, ["l1", "l2"], states)


def make_head(rng: np.random.Generator, max_move: int) -> nn.ParamSet:
    n_classes = magnitude_classes(max_move)
    ps = nn.ParamSet()
    nn.add_dense(ps, rng, "l1", TRUNK_OUT + ID_DIM, HEAD_HIDDEN)
    nn.add_dense(ps, rng, "pi", HEAD_HIDDEN, 4 * n_classes)
    nn.add_dense(ps, rng, "vf", HEAD_HIDDEN, 1, group="value")
    return ps


def head_forward(leaves: dict[str, ad.Tensor], h: ad.Tensor,
                 ids: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Returns (logits [B, 4*n_classes], values [B, 1])."""
    x = ad.concat([h, ids], axis=1)
    hidden = ad.tanh(nn.dense(leaves, "l1", x))
    return nn.dense(leaves, "pi", hidden), nn.dense(leaves, "vf", hidden)


def make_id_table(rng: np.random.Generator, n_agents: int) -> nn.ParamSet:
    ps = nn.ParamSet()
    ps.add("e", rng.normal(0.0, 0.1, size=(n_agents, ID_DIM)))
    return ps


# Tape-free forwards for rollouts and evaluation. These mirror
# trunk_forward/head_forward exactly (same op order on the same arrays),
# which the test suite checks bit-for-bit.

def trunk_forward_np(ps: nn.ParamSet, states: np.ndarray) -> np.ndarray:
    p = ps.params
    hidden = np.tanh(states @ p["l1.w"].value + p["l1.b"].value)
    return hidden @ p["l2.w"].value + p["l2.b"].value


def head_forward_np(ps: nn.ParamSet, h: np.ndarray,
                    ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = ps.params
    x = np.concatenate([h, ids], axis=1)
    hidden = np.tanh(x @ p["l1.w"].value + p["l1.b"].value)
    return (hidden @ p["pi.w"].value + p["pi.b"].value,
            hidden @ p["vf.w"].value + p["vf.b"].value)


# -- categorical policy over per-direction magnitudes --------------------
#
# Raw numpy versions are used during rollout/evaluation (no tape); the
# Tensor versions are used inside the PPO loss.

def _log_softmax_np(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def split_directions(logits: np.ndarray, n_classes: int) -> np.ndarray:
    """[B, 4*C] -> [B, 4, C]."""
    b = logits.shape[0]
    return logits.reshape(b, 4, n_classes)


def sample_actions(rng: np.random.Generator, logits: np.ndarray,
                   n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Sample one magnitude per direction; returns (actions [B,4], logp [B])."""
    per_dir = split_directions(logits, n_classes)
    logp = _log_softmax_np(per_dir)
    probs = np.exp(logp)
    cdf = probs.cumsum(axis=-1)
    u = rng.random(size=per_dir.shape[:2])
    actions = (u[..., None] > cdf).sum(axis=-1)
    actions = np.minimum(actions, n_classes - 1)
    rows = np.arange(per_dir.shape[0])[:, None]
    dirs = np.arange(4)[None, :]
    return actions, logp[rows, dirs, actions].sum(axis=1)


def greedy_actions(logits: np.ndarray, n_classes: int) -> np.ndarray:
    return split_directions(logits, n_classes).argmax(axis=-1)


def log_prob_np(logits: np.ndarray, actions: np.ndarray, n_classes: int) -> np.ndarray:
    per_dir = _log_softmax_np(split_directions(logits, n_classes))
    rows = np.arange(per_dir.shape[0])[:, None]
    dirs = np.arange(4)[None, :]
    return per_dir[rows, dirs, actions].sum(axis=1)


def action_log_prob(logits: ad.Tensor, actions: np.ndarray,
                    n_classes: int) -> ad.Tensor:
    """Tape version: joint log-probability = sum of per-direction log-probs."""
    parts = []
    for d in range(4):
        block = ad.narrow(logits, 1, d * n_classes, n_classes)
        parts.append(ad.take_per_row(ad.log_softmax(block), actions[:, d]))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total


def policy_entropy(logits: ad.Tensor, n_classes: int) -> ad.Tensor:
    """Per-sample entropy summed over the four direction distributions."""
    total = None
    for d in range(4):
        block = ad.narrow(logits, 1, d * n_classes, n_classes)
        lp = ad.log_softmax(block)
        h = ad.mul(ad.tsum(ad.mul(ad.exp(lp), lp), axis=1), -1.0)
        total = h if total is None else ad.add(total, h)
    return total
