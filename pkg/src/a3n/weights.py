"""Save/load torch modules through the named-tensor container."""
from __future__ import annotations

from collections import OrderedDict

import numpy as np
import torch

from .errors import UntrainedWeightsError, ValidationError
from .formats import read_weights, write_weights


def save_module(path, module: torch.nn.Module, manifest: dict) -> None:
    tensors = OrderedDict((k, v.detach().cpu().numpy().astype(np.float32)) for k, v in module.state_dict().items())
    write_weights(path, tensors, manifest)


def load_state(module: torch.nn.Module, tensors: dict) -> None:
    state = module.state_dict()
    missing = set(state) - set(tensors)
    if missing:
        raise ValidationError(f"weights file lacks tensors: {sorted(missing)[:5]}")
    new = OrderedDict()
    for k, ref in state.items():
        arr = torch.from_numpy(np.asarray(tensors[k]))
        if tuple(arr.shape) != tuple(ref.shape):
            raise ValidationError(f"tensor {k} has shape {tuple(arr.shape)}, expected {tuple(ref.shape)}")
        new[k] = arr.to(ref.dtype)
    module.load_state_dict(new)


def read_manifest_checked(path, kind: str) -> tuple[dict, dict]:
    tensors, manifest = read_weights(path)
    if manifest.get("kind") != kind:
        raise ValidationError(f"{path} holds {manifest.get('kind')!r} weights, expected {kind!r}")
    if not manifest.get("trained", False):
        raise UntrainedWeightsError(f"{path} holds untrained {kind} weights")
    return tensors, manifest
