"""Checkpoint save/load.

Format "starnet-v1": a single npz archive holding one named array per model
parameter/buffer (prefix "param.") and per Adam moment (prefix "opt."), plus a
"__meta__" JSON string with the format version, epoch, the canonical config
text and its hash. Arrays round-trip bit-exactly at their stored dtype.
"""

import json
import os

import numpy as np
import torch

from .errors import CheckpointError
from .model import StarNetConfig, build

FORMAT_VERSION = "starnet-v1"


def save_checkpoint(path, model, epoch=0, optimizer=None):
    arrays = {}
    for name, value in model.state_dict().items():
        arrays["param." + name] = value.detach().cpu().numpy()
    opt_groups = None
    if optimizer is not None:
        name_of = {id(p): n for n, p in model.named_parameters()}
        opt_groups = []
        for group in optimizer.param_groups:
            entry = {k: v for k, v in group.items() if k != "params"}
            entry = {k: (list(v) if isinstance(v, tuple) else v) for k, v in entry.items()
                     if isinstance(v, (bool, int, float, str, tuple, list, type(None)))}
            entry["param_names"] = [name_of[id(p)] for p in group["params"]]
            opt_groups.append(entry)
        for p, state in optimizer.state.items():
            pname = name_of.get(id(p))
            if pname is None:
                raise CheckpointError("optimizer tracks a parameter not in the model")
            for key, val in state.items():
                arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
                arrays[f"opt.{pname}.{key}"] = arr
    meta = {
        "version": FORMAT_VERSION,
        "epoch": int(epoch),
        "config": model.config.canonical_text(),
        "config_hash": model.config.config_hash(),
        "optimizer_groups": opt_groups,
    }
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as f:
        np.savez(f, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path):
    """Load a checkpoint; returns (model, meta, opt_arrays).

    `meta` holds epoch/config/optimizer_groups; `opt_arrays` maps
    "<param name>.<state key>" to numpy arrays, for restore_optimizer.
    """
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} has no metadata record")
        meta = json.loads(str(data["__meta__"][()]))
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {meta.get('version')!r},"
                f" expected {FORMAT_VERSION!r}"
            )
        config = StarNetConfig.from_text(meta["config"])
        if config.config_hash() != meta.get("config_hash"):
            raise CheckpointError(f"{path}: config hash mismatch, file corrupt")
        state = {}
        opt_arrays = {}
        for key in data.files:
            if key.startswith("param."):
                state[key[len("param."):]] = torch.from_numpy(data[key].copy())
            elif key.startswith("opt."):
                opt_arrays[key[len("opt."):]] = data[key].copy()
    model = build(config)
    dtypes = {v.dtype for v in state.values() if v.is_floating_point()}
    if torch.float64 in dtypes:
        model.double()
    model.load_state_dict(state, strict=True)
    return model, meta, opt_arrays


def restore_optimizer(optimizer, model, meta, opt_arrays):
    """Load saved Adam moments into a freshly constructed optimizer."""
    if not opt_arrays:
        raise CheckpointError("checkpoint holds no optimizer state")
    params = dict(model.named_parameters())
    by_param = {}
    for key, arr in opt_arrays.items():
        pname, state_key = key.rsplit(".", 1)
        if pname not in params:
            raise CheckpointError(f"optimizer state for unknown parameter {pname!r}")
        by_param.setdefault(pname, {})[state_key] = arr
    for pname, entries in by_param.items():
        p = params[pname]
        state = optimizer.state[p]
        for state_key, arr in entries.items():
            if state_key == "step":
                state[state_key] = torch.tensor(float(arr))
            else:
                state[state_key] = torch.from_numpy(arr.copy()).to(p.dtype)
    return optimizer
