"""Model checkpoints as a directory of ``.ten`` tensors plus a JSON manifest."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .tensorio import read_tensor, write_tensor

MANIFEST = "manifest.json"


def _file_name(module: str, key: str) -> str:
    return f"{module}__{key}.ten"


def save_checkpoint(directory, modules: dict[str, nn.Module], info: dict) -> Path:
    """Write every state-dict entry of ``modules`` and a manifest.

    Non-float buffers (BatchNorm batch counters) are stored as float32 and
    cast back on load; the manifest records the original dtype.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for mname, module in modules.items():
        for key, tensor in module.state_dict().items():
            arr = tensor.detach().cpu().numpy()
            fname = _file_name(mname, key)
            write_tensor(d / fname, arr.astype(np.float32))
            entries.append(
                {"module": mname, "name": key, "file": fname,
                 "shape": list(arr.shape), "dtype": str(arr.dtype)}
            )
    manifest = {"info": info, "tensors": entries}
    (d / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return d


def read_manifest(directory) -> dict:
    return json.loads((Path(directory) / MANIFEST).read_text())


def load_state(directory, modules: dict[str, nn.Module]) -> dict:
    """Load tensors into ``modules`` in place; returns the manifest info."""
    d = Path(directory)
    manifest = read_manifest(d)
    states: dict[str, dict] = {name: {} for name in modules}
    for e in manifest["tensors"]:
        if e["module"] not in modules:
            continue
        arr = read_tensor(d / e["file"]).astype(e["dtype"])
        if list(arr.shape) != e["shape"]:
            raise ValueError(f"{e['file']}: shape {arr.shape} != manifest {e['shape']}")
        states[e["module"]][e["name"]] = torch.from_numpy(arr)
    for name, module in modules.items():
        module.load_state_dict(states[name])
    return manifest["info"]
