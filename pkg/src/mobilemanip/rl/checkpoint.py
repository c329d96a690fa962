"""Policy checkpoints: magic bytes, JSON header, raw float32 parameters.

Layout::

    b"MMPOLICY"  | uint32 version | uint32 header length | header JSON (utf-8)
    | float32 little-endian parameters, concatenated in header order
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .ppo import PolicyNet

MAGIC = b"MMPOLICY"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_policy(path, policy: PolicyNet, meta: dict) -> None:
    state = policy.state_dict()
    params = [(k, list(v.shape)) for k, v in state.items()]
    header = {
        "obs_dim": policy.obs_dim,
        "action_spec": policy.action_spec,
        "hidden": policy.pi.in_features,
        "params": params,
        "config_hash": config_hash(meta.get("config", {})),
        **meta,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(v.detach().cpu().numpy().astype("<f4").tobytes() for v in state.values())
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(hb)) + hb + blob)


def read_header(path) -> dict:
    with open(path, "rb") as f:
        head = f.read(16)
        if head[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a policy checkpoint")
        version, n = struct.unpack("<II", head[8:])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(f.read(n))


def load_policy(path) -> tuple[PolicyNet, dict]:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a policy checkpoint")
    version, n = struct.unpack("<II", data[8:16])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + n])
    policy = PolicyNet(header["obs_dim"], header["action_spec"], header["hidden"])
    offset = 16 + n
    state = {}
    for name, shape in header["params"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, "<f4", count, offset).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        offset += 4 * count
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    policy.load_state_dict(state)
    return policy, header
