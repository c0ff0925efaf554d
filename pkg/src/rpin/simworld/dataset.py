"""On-disk SimB datasets.

Layout of a dataset directory::

    manifest.json          config, seed, episode count, format version, file list
    episode_00000.simb     one binary record per episode

Each record is a 24-byte little-endian header (magic ``SIMB``, then u32
version, m, T_ep, W, H) followed by T_ep*m*5 little-endian float32 values
(x, y, vx, vy, radius) in (t, ball) row-major order. Only states are stored;
frames are re-rendered on demand.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .physics import SimConfig, generate_episode

MAGIC = b"SIMB"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s5I")


def encode_episode(states: np.ndarray, width: int, height: int) -> bytes:
    states = np.asarray(states)
    T, m, five = states.shape
    if five != 5:
        raise ValueError(f"episode array must be [T, m, 5], got {states.shape}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, m, T, width, height)
    return header + states.astype("<f4").tobytes(order="C")


def decode_episode(blob: bytes, source: str = "<bytes>") -> tuple[np.ndarray, int, int]:
    if len(blob) < _HEADER.size:
        raise ValueError(f"{source}: truncated header")
    magic, version, m, T, width, height = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"{source}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{source}: unsupported format version {version}")
    expected = _HEADER.size + T * m * 5 * 4
    if len(blob) != expected:
        raise ValueError(f"{source}: expected {expected} bytes, found {len(blob)}")
    arr = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(T, m, 5).astype(np.float32)
    return arr, width, height


def episode_filename(index: int) -> str:
    return f"episode_{index:05d}.simb"


def gen_dataset(config: SimConfig, n_episodes: int, seed: int, path) -> dict:
    """Simulate ``n_episodes`` episodes (episode k uses seed ``seed + k``) and write them."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for k in range(n_episodes):
        ep = generate_episode(config, seed + k)
        name = episode_filename(k)
        try:
            (path / name).write_bytes(encode_episode(ep.as_array(), config.width, config.height))
        except OSError as exc:
            raise OSError(f"failed writing episode {k} to {path / name}: {exc}") from exc
        files.append({"file": name, "seed": seed + k})
    manifest = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": seed,
        "n_episodes": n_episodes,
        "episodes": files,
    }
    tmp = path / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path / "manifest.json")
    return manifest


@dataclass
class Dataset:
    path: Path
    config: SimConfig
    seed: int
    states: np.ndarray  # [n, T_ep, m, 5] float32
    seeds: list[int]

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def T_ep(self) -> int:
        return self.states.shape[1]

    @property
    def m(self) -> int:
        return self.states.shape[2]


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no manifest.json in dataset directory {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{manifest_path}: unsupported format version {manifest.get('format_version')}")
    config = SimConfig.from_dict(manifest["config"])
    arrays = []
    for k, entry in enumerate(manifest["episodes"]):
        f = path / entry["file"]
        arr, w, h = decode_episode(f.read_bytes(), str(f))
        if (w, h) != (config.width, config.height) or arr.shape[1] != config.m:
            raise ValueError(f"{f}: episode {k} does not match the manifest config")
        arrays.append(arr)
    states = np.stack(arrays) if arrays else np.zeros((0, config.T_ep, config.m, 5), np.float32)
    return Dataset(path, config, int(manifest["seed"]), states, [int(e["seed"]) for e in manifest["episodes"]])


def verify_dataset(path) -> list[int]:
    """Re-simulate every episode from its seed; return indices whose stored record differs bitwise."""
    ds = load_dataset(path)
    bad = []
    for k, s in enumerate(ds.seeds):
        ref = generate_episode(ds.config, s).as_array().astype(np.float32)
        if ref.tobytes() != ds.states[k].tobytes():
            bad.append(k)
    return bad
