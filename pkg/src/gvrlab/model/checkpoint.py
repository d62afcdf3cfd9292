"""Checkpoint files: a small header followed by named latent containers.

Layout (little-endian)::

    b"GVRM" | u32 version | 32-byte sha256 of the config JSON
    | u32 n | n bytes manifest JSON {"config", "step", "meta", "blocks": [[name, shape], ...]}
    | one GVRL container per block, in manifest order

Parameters with more than four extents are flattened into the container's
leading axis; the manifest keeps their true shape.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..codec import pack_array, unpack_array
from .config import GvrConfig
from .network import GvrModel

MAGIC = b"GVRM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _as4d(arr: np.ndarray) -> np.ndarray:
    if arr.ndim <= 4:
        return arr
    return arr.reshape((-1,) + arr.shape[-3:])


def save_checkpoint(model: GvrModel, path, step: int = 0, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> Path:
    """Write parameters, optional optimizer blocks and free-form JSON ``meta``."""
    blocks = [(k, np.asarray(v)) for k, v in model.state_dict().items()]
    blocks += [(f"opt/{k}", np.asarray(v)) for k, v in (extra or {}).items()]
    manifest = {
        "config": model.config.to_dict(),
        "step": int(step),
        "meta": meta or {},
        "blocks": [[name, list(arr.shape)] for name, arr in blocks],
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    parts = [MAGIC, struct.pack("<I", VERSION), model.config.digest(), struct.pack("<I", len(head)), head]
    parts += [pack_array(_as4d(arr)) for _, arr in blocks]
    path = Path(path)
    path.write_bytes(b"".join(parts))
    return path


def _manifest(path) -> tuple[bytes, dict, int]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a model checkpoint")
    (version,) = struct.unpack_from("<I", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", buf, 40)
    try:
        manifest = json.loads(buf[44:44 + n])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest") from exc
    return buf, manifest, 44 + n


def checkpoint_meta(path) -> dict:
    return _manifest(path)[1].get("meta", {})


def read_checkpoint(path) -> tuple[GvrConfig, dict[str, np.ndarray], int]:
    buf, manifest, offset = _manifest(path)
    digest = buf[8:40]
    config = GvrConfig.from_dict(manifest["config"])
    if hashlib.sha256(config.to_json().encode()).digest() != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    state = {}
    for name, shape in manifest["blocks"]:
        arr, offset = unpack_array(buf, offset)
        state[name] = arr.reshape(shape)
    return config, state, int(manifest["step"])


def load_checkpoint(path) -> tuple[GvrModel, dict[str, np.ndarray], int]:
    """Model plus any optimizer blocks and the recorded step."""
    config, state, step = read_checkpoint(path)
    model = GvrModel(config)
    model.load_state_dict({k: v for k, v in state.items() if not k.startswith("opt/")})
    opt = {k[4:]: v for k, v in state.items() if k.startswith("opt/")}
    return model, opt, step
