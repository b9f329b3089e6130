"""Versioned checkpoint container.

One npz file holds every named tensor (values plus Adam moments) together
with a JSON metadata record describing the group-tree topology and the
controller state. Arrays round-trip bit-exactly, so reloaded networks
reproduce forward passes exactly.
"""

from __future__ import annotations

import json

import numpy as np

from . import nn
from .controller import ControllerState
from .errors import CheckpointError
from .groups import GroupTree, GlobalGroup, LocalGroup

CHECKPOINT_VERSION = 1


def _set_entries(tree: GroupTree) -> dict[str, nn.ParamSet]:
    sets = {f"trunk{g}": gg.trunk for g, gg in enumerate(tree.globals)}
    for lid, grp in tree.locals.items():
        sets[f"head{lid}"] = grp.head
    sets["ids"] = tree.ids
    if tree.encoder is not None:
        sets["encoder"] = tree.encoder
    return sets


def save_checkpoint(path, tree: GroupTree, state: ControllerState,
                    meta_extra: dict | None = None) -> None:
    sets = _set_entries(tree)
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_agents": tree.n_agents,
        "ids_frozen": tree.ids_frozen,
        "has_encoder": tree.encoder is not None,
        "next_local_id": tree._next_local_id,
        "globals": [list(gg.local_ids) for gg in tree.globals],
        "locals": {str(lid): {"members": grp.members, "global": grp.global_idx}
                   for lid, grp in tree.locals.items()},
        "controller": {
            "running_divergence": state.running_divergence,
            "period": state.period,
            "episodes_since_regroup": state.episodes_since_regroup,
        },
        "params": {
            key: [{"name": name, "group": p.group, "step": p.step}
                  for name, p in ps.params.items()]
            for key, ps in sets.items()
        },
    }
    if meta_extra:
        meta["extra"] = meta_extra
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for key, ps in sets.items():
        for name, p in ps.params.items():
            arrays[f"{key}/{name}/value"] = p.value
            arrays[f"{key}/{name}/m"] = p.m
            arrays[f"{key}/{name}/v"] = p.v
    np.savez(path, **arrays)


def _load_set(data, key: str, entries: list[dict]) -> nn.ParamSet:
    ps = nn.ParamSet()
    for entry in entries:
        name = entry["name"]
        ps.add(name, data[f"{key}/{name}/value"], group=entry["group"])
        ps[name].m = np.asarray(data[f"{key}/{name}/m"], dtype=np.float64)
        ps[name].v = np.asarray(data[f"{key}/{name}/v"], dtype=np.float64)
        ps[name].step = int(entry["step"])
    return ps


def load_checkpoint(path) -> tuple[GroupTree, ControllerState, dict]:
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} is not a checkpoint (missing metadata)")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")

        ids = _load_set(data, "ids", meta["params"]["ids"])
        encoder = (_load_set(data, "encoder", meta["params"]["encoder"])
                   if meta["has_encoder"] else None)
        tree = GroupTree(meta["n_agents"], ids, ids_frozen=meta["ids_frozen"],
                         encoder=encoder)
        for g, local_ids in enumerate(meta["globals"]):
            trunk = _load_set(data, f"trunk{g}", meta["params"][f"trunk{g}"])
            tree.globals.append(GlobalGroup(trunk, list(local_ids)))
        for lid_str, info in meta["locals"].items():
            lid = int(lid_str)
            head = _load_set(data, f"head{lid}", meta["params"][f"head{lid}"])
            tree.locals[lid] = LocalGroup(head, list(info["members"]), int(info["global"]))
        tree._next_local_id = int(meta["next_local_id"])
        tree.validate()

        ctrl = meta["controller"]
        state = ControllerState(
            running_divergence=float(ctrl["running_divergence"]),
            period=int(ctrl["period"]),
            episodes_since_regroup=int(ctrl["episodes_since_regroup"]),
        )
    return tree, state, meta.get("extra", {})
