"""Checkpoint I/O: numpy .npz archives with slash-separated tensor keys.

Key scheme (examples):

    path0/stage1/block0/conv/weight
    path0/stage1/block0/norm/{weight,bias,mean,var}
    interact/stage3/pair0/f_low/weight
    head/fuse/{conv,norm}/...   head/classify/weight

plus two metadata strings: ``__spec__`` (the serialized spec) and
``__meta__`` (JSON: block/interaction kinds, class count, seed).  The format
is framework-neutral on purpose; nothing but numpy is needed to inspect it.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from pathseg import archspec
from pathseg.netcore.network import MultiPathNet, build_network

_CHECKPOINT_VERSION = 1


def _key_for(state_name: str) -> str | None:
    """Translate a torch state_dict name into the documented key scheme."""
    parts = state_name.split(".")
    if parts[-1] == "num_batches_tracked":
        return None
    tail = {"running_mean": "mean", "running_var": "var"}.get(parts[-1], parts[-1])
    parts = parts[:-1] + [tail]
    out = []
    i = 0
    while i < len(parts):
        p = parts[i]
        if p == "paths":
            out.append(f"path{parts[i + 1]}")
            i += 2
        elif p == "stages":
            out.append(f"stage{int(parts[i + 1]) + 1}")
            i += 2
        elif p == "blocks":
            out.append(f"block{parts[i + 1]}")
            i += 2
        elif p == "interactions":
            out.append(f"interact/stage{int(parts[i + 1]) + 3}/pair{parts[i + 2]}")
            i += 3
        elif p == "head":
            out.append("head")
            i += 1
            if i < len(parts) and parts[i].startswith("fuse_"):
                out.append("fuse/" + parts[i][len("fuse_"):])
                i += 1
        else:
            out.append(p)
            i += 1
    return "/".join(out)


def key_map(net: MultiPathNet) -> dict:
    """Bijection: documented key -> state_dict name for this network."""
    mapping = {}
    for name in net.state_dict():
        key = _key_for(name)
        if key is None:
            continue
        if key in mapping:
            raise AssertionError(f"key collision: {key} from {name} and {mapping[key]}")
        mapping[key] = name
    return mapping


def save_checkpoint(net: MultiPathNet, path) -> None:
    arrays = {}
    state = net.state_dict()
    for key, name in key_map(net).items():
        arrays[key] = state[name].detach().cpu().numpy()
    meta = {
        "version": _CHECKPOINT_VERSION,
        "block_kind": net.block_kind.value,
        "interaction_kind": net.interaction_kind.value,
        "num_classes": net.num_classes,
        "seed": net.seed,
    }
    arrays["__spec__"] = np.array(archspec.serialize(net.spec))
    arrays["__meta__"] = np.array(json.dumps(meta))
    # write exactly to `path`: np.savez appends .npz to bare filenames
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_weights(net: MultiPathNet, path) -> MultiPathNet:
    """Copy weights from a checkpoint into an existing, same-shaped network."""
    donor = load_checkpoint(path)
    if donor.spec != net.spec:
        raise ValueError(
            f"{path}: checkpoint spec {archspec.serialize(donor.spec)} does not "
            f"match network spec {archspec.serialize(net.spec)}"
        )
    net.load_state_dict(donor.state_dict())
    return net


def load_checkpoint(path) -> MultiPathNet:
    with np.load(path, allow_pickle=False) as data:
        if "__spec__" not in data or "__meta__" not in data:
            raise ValueError(f"{path}: not a network checkpoint (missing metadata)")
        spec = archspec.parse(str(data["__spec__"][()]))
        meta = json.loads(str(data["__meta__"][()]))
        net = build_network(
            spec,
            block_kind=meta["block_kind"],
            interaction_kind=meta["interaction_kind"],
            num_classes=int(meta["num_classes"]),
            seed=int(meta.get("seed", 0)),
        )
        mapping = key_map(net)
        stored = {k for k in data.files if not k.startswith("__")}
        missing = sorted(set(mapping) - stored)
        extra = sorted(stored - set(mapping))
        if missing or extra:
            raise ValueError(
                f"{path}: key mismatch (missing {missing[:3]}..., unexpected {extra[:3]}...)"
                if len(missing) + len(extra) > 6
                else f"{path}: key mismatch (missing {missing}, unexpected {extra})"
            )
        state = net.state_dict()
        for key, name in mapping.items():
            tensor = torch.from_numpy(np.asarray(data[key]))
            if tuple(tensor.shape) != tuple(state[name].shape):
                raise ValueError(
                    f"{path}: shape mismatch for {key}: "
                    f"{tuple(tensor.shape)} vs {tuple(state[name].shape)}"
                )
            state[name] = tensor.to(state[name].dtype)
        net.load_state_dict(state)
    return net
