"""Checkpoint container.

A checkpoint is a single ``.npz`` file of named arrays:

* ``generator/<name>`` and ``discriminator/<name>``: every parameter and buffer.
* ``opt_g/<index>/<key>`` and ``opt_d/<index>/<key>``: Adam moment tensors and step counts.
* ``meta/config``: the experiment config as JSON text.
* ``meta/opt_g_groups``, ``meta/opt_d_groups``: optimizer hyper-parameters as JSON text.
* ``meta/rng``: the training RNG stream states as JSON text.
* ``meta/step``, ``meta/seed``: int64 scalars.

Text entries are stored as 0-d unicode arrays, so the file loads with
``allow_pickle=False``. Tensors are copied bit-for-bit.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

from ..training import build_state
from .config import ExperimentConfig


class CheckpointError(OSError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return {"__array__": obj.tolist(), "dtype": str(obj.dtype)}
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _unjson(obj):
    if isinstance(obj, dict):
        if "__array__" in obj:
            return np.array(obj["__array__"], dtype=obj["dtype"])
        return {k: _unjson(v) for k, v in obj.items()}
    return obj


def _text(s):
    return np.array(s)


def _module_arrays(prefix, module):
    out = {}
    for name, t in module.state_dict().items():
        out[f"{prefix}/{name}"] = t.detach().cpu().numpy().copy()
    return out


def _optimizer_arrays(prefix, opt):
    sd = opt.state_dict()
    out = {}
    for idx, entry in sd["state"].items():
        for key, val in entry.items():
            arr = val.detach().cpu().numpy() if torch.is_tensor(val) else np.asarray(val)
            out[f"{prefix}/{idx}/{key}"] = arr.copy()
    return out, json.dumps(sd["param_groups"], sort_keys=True)


def save_checkpoint(path, state, config):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    arrays.update(_module_arrays("generator", state.generator))
    arrays.update(_module_arrays("discriminator", state.discriminator))
    g_arrays, g_groups = _optimizer_arrays("opt_g", state.opt_g)
    d_arrays, d_groups = _optimizer_arrays("opt_d", state.opt_d)
    arrays.update(g_arrays)
    arrays.update(d_arrays)
    rng = {k: _jsonable(v.get_state()) for k, v in state.rng_streams().items()}
    arrays["meta/config"] = _text(config.to_json())
    arrays["meta/opt_g_groups"] = _text(g_groups)
    arrays["meta/opt_d_groups"] = _text(d_groups)
    arrays["meta/rng"] = _text(json.dumps(rng, sort_keys=True))
    arrays["meta/step"] = np.int64(state.step)
    arrays["meta/seed"] = np.int64(state.seed)
    # write then rename so a reader never sees a half-written file
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)
    return path


def read_checkpoint(path):
    """Raw ``{name: array}`` dict of a checkpoint file."""
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            return {k: data[k] for k in data.files}
    except (ValueError, OSError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None


def checkpoint_config(path):
    return ExperimentConfig.from_dict(json.loads(str(read_checkpoint(path)["meta/config"])))


def _load_module(module, arrays, prefix):
    sd = module.state_dict()
    names = {k[len(prefix) + 1:] for k in arrays if k.startswith(prefix + "/")}
    if names != set(sd):
        missing, extra = sorted(set(sd) - names), sorted(names - set(sd))
        raise CheckpointError(f"{prefix} arrays do not match the model (missing {missing}, unexpected {extra})")
    module.load_state_dict({k: torch.from_numpy(arrays[f"{prefix}/{k}"].copy()) for k in sd})


def _load_optimizer(opt, arrays, prefix, groups):
    state = {}
    for key, arr in arrays.items():
        if not key.startswith(prefix + "/"):
            continue
        _, idx, name = key.split("/", 2)
        state.setdefault(int(idx), {})[name] = torch.from_numpy(arr.copy())
    opt.load_state_dict({"state": state, "param_groups": json.loads(groups)})


def load_checkpoint(path, config=None):
    """Rebuild a full :class:`TrainState` (models, optimizers, RNG streams).

    ``config`` defaults to the snapshot stored in the file.
    """
    arrays = read_checkpoint(path)
    stored = ExperimentConfig.from_dict(json.loads(str(arrays["meta/config"])))
    config = config or stored
    if config.config_hash() != stored.config_hash():
        raise CheckpointError(f"{path} was written by config {stored.config_hash()}, not {config.config_hash()}")
    state = build_state(config.gspec(), config.dspec(), config.recipe, int(arrays["meta/seed"]))
    _load_module(state.generator, arrays, "generator")
    _load_module(state.discriminator, arrays, "discriminator")
    _load_optimizer(state.opt_g, arrays, "opt_g", str(arrays["meta/opt_g_groups"]))
    _load_optimizer(state.opt_d, arrays, "opt_d", str(arrays["meta/opt_d_groups"]))
    for name, st in json.loads(str(arrays["meta/rng"])).items():
        getattr(state, f"rng_{name}").set_state(_unjson(st))
    state.step = int(arrays["meta/step"])
    return state, config


__all__ = ["CheckpointError", "save_checkpoint", "load_checkpoint", "read_checkpoint", "checkpoint_config"]
