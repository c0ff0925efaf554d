"""Checkpoint file format.

Layout of ``model.ckpt``::

    b"RPINCKPT"  u32 version  u32 manifest_len  manifest (UTF-8 JSON)  blob

The manifest lists every tensor as {name, shape, dtype, offset} with offsets
in bytes into the blob; the blob holds little-endian float32 data. Model
parameters, batchnorm buffers and Adam moments are all stored, so a reload
reproduces forward outputs bitwise and resumes optimisation exactly.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..model import RPIN, ModelConfig

MAGIC = b"RPINCKPT"
VERSION = 1
_DTYPE = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model_config: dict
    tensors: dict[str, np.ndarray]
    iter: int = 0
    train_config: dict = field(default_factory=dict)
    rng_state: dict | None = None
    meta: dict = field(default_factory=dict)


def _state_names(model: RPIN) -> tuple[list[tuple[str, object]], list[tuple[str, np.ndarray]]]:
    return list(model.named_parameters()), list(model.named_buffers())


def model_tensors(model: RPIN, with_optimizer: bool = True) -> dict[str, np.ndarray]:
    params, buffers = _state_names(model)
    out = {}
    for name, p in params:
        out[f"param/{name}"] = p.data
        if with_optimizer:
            out[f"adam_m/{name}"] = p.adam_m
            out[f"adam_v/{name}"] = p.adam_v
    for name, b in buffers:
        out[f"buffer/{name}"] = b
    return out


def from_model(model: RPIN, iter: int = 0, train_config: dict | None = None,  # noqa: A002
               rng_state: dict | None = None, meta: dict | None = None) -> Checkpoint:
    steps = {name: p.step_count for name, p in model.named_parameters()}
    meta = dict(meta or {})
    meta["adam_steps"] = steps
    return Checkpoint(model.config.to_dict(), {k: v.copy() for k, v in model_tensors(model).items()},
                      iter, dict(train_config or {}), rng_state, meta)


def load_into(model: RPIN, ckpt: Checkpoint, with_optimizer: bool = True) -> None:
    """Copy checkpoint tensors into ``model``; every expected tensor must be present with its shape."""
    mine = model.config.to_dict()
    for key in ("kind", "d", "k", "roi_size", "height", "width", "hourglass_depth"):
        if key in ckpt.model_config and ckpt.model_config[key] != mine[key]:
            raise CheckpointError(f"checkpoint model config {key}={ckpt.model_config[key]!r} does not match "
                                  f"model {key}={mine[key]!r}")
    expected = model_tensors(model, with_optimizer=with_optimizer)
    for name, arr in expected.items():
        if name not in ckpt.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        src = ckpt.tensors[name]
        if src.shape != arr.shape:
            raise CheckpointError(f"tensor {name!r}: checkpoint shape {src.shape} != model shape {arr.shape}")
    for name, arr in expected.items():
        arr[...] = ckpt.tensors[name]
    if with_optimizer:
        steps = ckpt.meta.get("adam_steps", {})
        for name, p in model.named_parameters():
            p.step_count = int(steps.get(name, 0))


def build_model(ckpt: Checkpoint, with_optimizer: bool = False) -> RPIN:
    model = RPIN(ModelConfig.from_dict(ckpt.model_config))
    load_into(model, ckpt, with_optimizer=with_optimizer)
    model.eval()
    return model


def save(ckpt: Checkpoint, path) -> Path:
    """Atomically write ``ckpt`` (temp file in the same directory, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries, chunks, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype=_DTYPE)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32", "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "tensors": entries,
        "blob_bytes": offset,
        "iter": int(ckpt.iter),
        "model_config": ckpt.model_config,
        "train_config": ckpt.train_config,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(head)))
        f.write(head)
        for c in chunks:
            f.write(c)
    os.replace(tmp, path)
    return path


def load(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:8]!r})")
    if len(raw) < 16:
        raise CheckpointError(f"{path}: truncated header")
    version, n = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    try:
        manifest = json.loads(raw[16:16 + n].decode("utf-8"))
        entries = manifest["tensors"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest ({exc})") from None
    blob = raw[16 + n:]
    if len(blob) != manifest.get("blob_bytes", -1):
        raise CheckpointError(f"{path}: blob has {len(blob)} bytes, manifest says {manifest.get('blob_bytes')}")
    tensors = {}
    for e in entries:
        name = e.get("name")
        if e.get("dtype") != "float32":
            raise CheckpointError(f"{path}: tensor {name!r} has unsupported dtype {e.get('dtype')!r}")
        shape = tuple(int(s) for s in e["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = int(e["offset"])
        if start < 0 or start + 4 * count > len(blob):
            raise CheckpointError(f"{path}: tensor {name!r} lies outside the blob")
        tensors[name] = np.frombuffer(blob, dtype=_DTYPE, count=count, offset=start).reshape(shape).astype(np.float32)
    return Checkpoint(manifest.get("model_config", {}), tensors, int(manifest.get("iter", 0)),
                      manifest.get("train_config", {}), manifest.get("rng_state"), manifest.get("meta", {}))
