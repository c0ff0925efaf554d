"""Rasterization, ground-truth boxes, and 21x21 box masks."""

from __future__ import annotations

import numpy as np

from .physics import BallState, WorldState

MASK_SIZE = 21

# RGB in [0, 1]. Balls cycle through BALL_COLORS by color_index.
BACKGROUND = (0.05, 0.30, 0.12)  # dark green felt
BALL_COLORS = (
    (0.95, 0.95, 0.95),  # white
    (0.85, 0.10, 0.10),  # red
    (0.95, 0.80, 0.10),  # yellow
    (0.15, 0.35, 0.90),  # blue
    (0.95, 0.50, 0.05),  # orange
    (0.60, 0.20, 0.75),  # purple
    (0.10, 0.85, 0.85),  # cyan
    (0.95, 0.45, 0.70),  # pink
)


def ball_color(color_index: int) -> tuple[float, float, float]:
    return BALL_COLORS[color_index % len(BALL_COLORS)]


def render_arrays(positions: np.ndarray, radii: np.ndarray, width: int = 64, height: int = 64,
                  colors=None) -> np.ndarray:
    """Render a batch of scenes.

    positions: [..., m, 2] ball centres in pixels; radii: [m] or [..., m].
    Returns float32 [..., 3, H, W]. Pixel (i, j) is painted by ball k when its
    centre (i + 0.5, j + 0.5) lies in the disk; later balls paint over earlier.
    """
    positions = np.asarray(positions, dtype=np.float64)
    lead, m = positions.shape[:-2], positions.shape[-2]
    radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), lead + (m,))
    colors = range(m) if colors is None else colors
    palette = np.array([ball_color(c) for c in colors], dtype=np.float32).reshape(m, 3)
    img = np.empty(lead + (3, height, width), dtype=np.float32)
    img[...] = np.array(BACKGROUND, dtype=np.float32)[:, None, None]
    xs = np.arange(width) + 0.5
    ys = np.arange(height) + 0.5
    for k in range(m):
        dx = xs - positions[..., k, 0, None]
        dy = ys - positions[..., k, 1, None]
        inside = dy[..., :, None] ** 2 + dx[..., None, :] ** 2 <= radii[..., k, None, None] ** 2
        for c in range(3):
            np.copyto(img[..., c, :, :], palette[k, c], where=inside)
    return img


def render(state: WorldState) -> np.ndarray:
    """[3, H, W] float32 image of the state."""
    arr = state.as_array()
    return render_arrays(arr[:, :2], arr[:, 4], state.width, state.height,
                         [b.color_index for b in state.balls])


def gt_box(ball: BallState) -> tuple[float, float, float, float]:
    return (ball.x, ball.y, 2.0 * ball.radius, 2.0 * ball.radius)


def gt_boxes(arr: np.ndarray) -> np.ndarray:
    """[..., 5] state rows -> [..., 4] pixel boxes (cx, cy, w, h)."""
    arr = np.asarray(arr)
    d = 2.0 * arr[..., 4:5]
    return np.concatenate([arr[..., 0:2], d, d], axis=-1)


def gt_masks(centers: np.ndarray, radii: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """Binary disk masks sampled at cell centres of each box's 21x21 grid -> uint8 [..., 21, 21]."""
    centers = np.asarray(centers, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    frac = (np.arange(MASK_SIZE) + 0.5) / MASK_SIZE
    x0 = boxes[..., 0] - boxes[..., 2] / 2
    y0 = boxes[..., 1] - boxes[..., 3] / 2
    gx = x0[..., None] + frac * boxes[..., 2, None] - centers[..., 0, None]
    gy = y0[..., None] + frac * boxes[..., 3, None] - centers[..., 1, None]
    d2 = gy[..., :, None] ** 2 + gx[..., None, :] ** 2
    return (d2 <= radii[..., None, None] ** 2).astype(np.uint8)


def gt_mask(ball: BallState, box) -> np.ndarray:
    """21x21 mask; cell (u, v) is stored at [v, u] (row = y)."""
    if box[2] <= 0 or box[3] <= 0:
        raise ValueError("gt_mask: box width and height must be positive")
    return gt_masks(np.array(ball.position), np.array(ball.radius), np.array(box))
