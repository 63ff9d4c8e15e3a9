"""Checkpoint container.

Layout::

    b"AADCKPT1"                 8-byte magic
    uint64 little-endian        header length in bytes
    header                      UTF-8 JSON object
    blob                        little-endian float32 values

``header["tensors"]`` lists ``{name, shape, offset, count}`` for every
entry of the model's ``state_dict`` in its iteration order; ``offset`` and
``count`` are in float32 elements from the start of the blob.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np
import torch

MAGIC = b"AADCKPT1"


class CheckpointError(ValueError):
    pass


def save_state(path, state_dict, header: dict) -> None:
    entries, chunks, offset = [], [], 0
    for name, t in state_dict.items():
        if not torch.is_floating_point(t):
            raise CheckpointError(f"{name}: only floating-point tensors can be stored")
        arr = np.ascontiguousarray(t.detach().cpu().numpy(), dtype="<f4").ravel()
        entries.append({"name": name, "shape": list(t.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    head = dict(header, tensors=entries)
    raw = json.dumps(head, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for c in chunks:
            fh.write(c)
    os.replace(tmp, path)


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        return _read_header(fh, path)


def _read_header(fh, path):
    if fh.read(8) != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<Q", fh.read(8))
    try:
        return json.loads(fh.read(n).decode("utf-8"))
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc


def load_state(path):
    """Return ``(header, state_dict)``."""
    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        blob = np.frombuffer(fh.read(), dtype="<f4")
    state = {}
    for e in header["tensors"]:
        end = e["offset"] + e["count"]
        if end > blob.size:
            raise CheckpointError(f"{path}: truncated blob at {e['name']}")
        values = blob[e["offset"]:end].astype(np.float32).reshape(e["shape"])
        state[e["name"]] = torch.from_numpy(values.copy())
    return header, state
