"""Training windows: rendered input frames plus future ground-truth boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import Rng
from ..simworld import Dataset, gt_boxes, gt_masks, render_arrays


@dataclass
class Batch:
    images: np.ndarray  # [B, N, 3, H, W] float32
    boxes: np.ndarray  # [B, N, m, 4] input boxes, pixels
    gt_boxes: np.ndarray  # [B, T, m, 4] normalized by image size
    gt_masks: np.ndarray | None  # [B, T, m, 21, 21] uint8
    episodes: np.ndarray  # [B] episode indices
    offsets: np.ndarray  # [B] start frames


def normalize_boxes(boxes: np.ndarray, width: int, height: int) -> np.ndarray:
    return np.asarray(boxes, dtype=np.float64) / np.array([width, height, width, height], dtype=np.float64)


def max_offset(T_ep: int, N: int, T: int) -> int:
    """Largest valid window start: N input frames then T targets must fit in the episode."""
    if N + T > T_ep:
        raise ValueError(f"window of N={N} inputs + T={T} targets exceeds episode length {T_ep}")
    return T_ep - N - T


def make_batch(states: np.ndarray, episodes, offsets, N: int, T: int, width: int, height: int,
               with_masks: bool = False) -> Batch:
    """Assemble windows from a [n, T_ep, m, 5] state array."""
    episodes = np.asarray(episodes, dtype=np.intp)
    offsets = np.asarray(offsets, dtype=np.intp)
    steps = offsets[:, None] + np.arange(N + T)
    win = states[episodes[:, None], steps].astype(np.float64)  # [B, N+T, m, 5]
    seen, future = win[:, :N], win[:, N:]
    images = render_arrays(seen[..., :2], seen[..., 4], width, height)
    boxes = gt_boxes(seen)
    fut_boxes = gt_boxes(future)
    masks = gt_masks(future[..., :2], future[..., 4], fut_boxes) if with_masks else None
    return Batch(images, boxes, normalize_boxes(fut_boxes, width, height).astype(np.float32),
                 masks, episodes, offsets)


def sample_batch(dataset: Dataset, rng: Rng, N: int, T_train: int, batch_size: int = 8,
                 with_masks: bool = False) -> Batch:
    """Uniformly sample episodes and window starts, then render the inputs."""
    hi = max_offset(dataset.T_ep, N, T_train)
    episodes = rng.integers(0, len(dataset), size=batch_size)
    offsets = rng.integers(0, hi + 1, size=batch_size)
    cfg = dataset.config
    return make_batch(dataset.states, episodes, offsets, N, T_train, cfg.width, cfg.height, with_masks)
