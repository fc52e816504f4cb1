"""Checkpoints as ``.npz`` archives with a JSON header.

Arrays are stored raw, so a save/load round trip is bit-exact. The header
records the format version, the model config, the optimizer counters and
a SHA-256 over every array; a mismatch on load raises
:class:`~prcurves.errors.CheckpointError`.
"""
import hashlib
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from ..errors import CheckpointError
from .model import ModelConfig
from .optim import AdamState

FORMAT = "prcurves-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    model_cfg: ModelConfig
    params: dict
    state: AdamState
    extra: dict = None


def _digest(arrays):
    h = hashlib.sha256()
    for key in sorted(arrays):
        a = np.ascontiguousarray(arrays[key])
        h.update(key.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def save(path, model_cfg, params, state=None, extra=None):
    state = AdamState.zeros_like(params) if state is None else state
    arrays = {}
    for name, p in params.items():
        arrays["param/" + name] = p
        arrays["adam_m/" + name] = state.m[name]
        arrays["adam_v/" + name] = state.v[name]
    header = {
        "format": FORMAT,
        "version": VERSION,
        "model": model_cfg.to_dict(),
        "param_names": list(params),
        "adam": {"step": state.step, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps},
        "extra": extra or {},
        "sha256": _digest(arrays),
    }
    arrays["header"] = np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load(path):
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
        header = json.loads(arrays.pop("header").tobytes().decode())
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not a {FORMAT} file")
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path} has version {header.get('version')}, expected {VERSION}")
    if _digest(arrays) != header.get("sha256"):
        raise CheckpointError(f"{path} failed its checksum")
    try:
        names = header["param_names"]
        params = {n: arrays["param/" + n] for n in names}
        adam = header["adam"]
        state = AdamState(
            {n: arrays["adam_m/" + n] for n in names},
            {n: arrays["adam_v/" + n] for n in names},
            step=adam["step"], beta1=adam["beta1"], beta2=adam["beta2"], eps=adam["eps"],
        )
        model_cfg = ModelConfig(**header["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path} is missing fields: {exc}") from exc
    return Checkpoint(model_cfg, params, state, header.get("extra") or {})
