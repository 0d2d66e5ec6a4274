"""Versioned binary checkpoints with named float64 tensors.

Byte layout (all integers little-endian):

  offset  size  field
  0       8     magic b"MAPSIMCK"
  8       4     format version (uint32, currently 1)
  12      32    config hash (raw sha256 of the canonical config JSON)
  44      4     tensor count (uint32)
  then per tensor, in sorted name order:
          2     name length (uint16)
          -     name (UTF-8)
          1     ndim (uint8)
          4*d   dims (uint32 each)
          8*n   data (float64, row-major)

Loading a checkpoint whose config hash differs from the current config is
allowed (same-shaped tensors load fine) but warned about.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings

import numpy as np

from .attention import EncoderParams
from .nets import ACT_IDENTITY, ACT_TANH, ActorCriticParams, DenseLayer, PolicyParams

MAGIC = b"MAPSIMCK"
VERSION = 1
_HASH_BYTES = 32


class CheckpointError(RuntimeError):
    """Corrupt, truncated or incompatible checkpoint file."""


def config_hash(config_dict: dict) -> bytes:
    """sha256 of the canonical JSON form of a config dictionary."""
    payload = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).digest()


def save_checkpoint(path, tensors: dict, cfg_hash: bytes = b"\x00" * _HASH_BYTES) -> None:
    if len(cfg_hash) != _HASH_BYTES:
        raise ValueError("config hash must be %d bytes" % _HASH_BYTES)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(cfg_hash)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def _read_exact(fh, count: int) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise CheckpointError("truncated checkpoint file")
    return data


def load_checkpoint(path):
    """Returns (tensors dict, config hash bytes)."""
    with open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise CheckpointError("bad magic string; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError("unsupported checkpoint version %d" % version)
        cfg_hash = _read_exact(fh, _HASH_BYTES)
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim)
            )
            size = int(np.prod(shape)) if shape else 1
            data = _read_exact(fh, 8 * size)
            tensors[name] = np.frombuffer(data, dtype="<f8").astype(float).reshape(shape)
    return tensors, cfg_hash


def verify_config_hash(loaded_hash: bytes, expected: bytes, path="checkpoint") -> bool:
    """Warn (not fail) when a checkpoint was written under another config."""
    if loaded_hash != expected:
        warnings.warn(
            "%s was written under a different config; loading anyway" % path,
            stacklevel=2,
        )
        return False
    return True


def policy_to_tensors(params: PolicyParams) -> dict:
    from .nets import named_tensors

    return {name: arr.copy() for name, arr in named_tensors(params).items()}


def policy_from_tensors(tensors: dict) -> PolicyParams:
    """Rebuild policy parameters; the MAP branch is present iff its keys are."""
    try:
        enc_ue = EncoderParams(
            w_k=tensors["enc_ue.w_k"].copy(),
            w_v=tensors["enc_ue.w_v"].copy(),
            w_q=tensors["enc_ue.w_q"].copy(),
        )
        enc_map = None
        if "enc_map.w_k" in tensors:
            enc_map = EncoderParams(
                w_k=tensors["enc_map.w_k"].copy(),
                w_v=tensors["enc_map.w_v"].copy(),
                w_q=tensors["enc_map.w_q"].copy(),
            )
        core = ActorCriticParams(
            trunk=DenseLayer(tensors["trunk.w"].copy(), tensors["trunk.b"].copy(), ACT_TANH),
            actor_head=DenseLayer(tensors["actor.w"].copy(), tensors["actor.b"].copy(), ACT_IDENTITY),
            critic_head=DenseLayer(tensors["critic.w"].copy(), tensors["critic.b"].copy(), ACT_IDENTITY),
        )
    except KeyError as exc:
        raise CheckpointError("checkpoint is missing tensor %s" % exc) from exc
    n = enc_ue.w_k.shape[0]
    if core.trunk.weights.shape != (2 * n, 2 * n):
        raise CheckpointError(
            "tensor shape mismatch: trunk %s does not fit encoder width %d"
            % (core.trunk.weights.shape, n)
        )
    return PolicyParams(enc_ue=enc_ue, enc_map=enc_map, core=core, width=n)
