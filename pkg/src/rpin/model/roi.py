"""RoI feature extraction by bilinear sampling at cell centres."""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from ..numcore import Tensor


def roi_points(boxes: np.ndarray, out_size: int = 5, feature_stride: int = 4) -> np.ndarray:
    """Sampling points in feature coordinates for pixel boxes (cx, cy, w, h).

    Returns [R, out_size*out_size, 2] (x, y) points, row-major over the output grid.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    frac = (np.arange(out_size) + 0.5) / out_size
    x = boxes[:, 0:1] - boxes[:, 2:3] / 2 + frac * boxes[:, 2:3]
    y = boxes[:, 1:2] - boxes[:, 3:4] / 2 + frac * boxes[:, 3:4]
    gx = np.broadcast_to(x[:, None, :], (len(boxes), out_size, out_size))
    gy = np.broadcast_to(y[:, :, None], (len(boxes), out_size, out_size))
    return np.stack([gx, gy], axis=-1).reshape(len(boxes), -1, 2) / feature_stride


def roi_align(features: Tensor, boxes: np.ndarray, batch_index: np.ndarray, out_size: int = 5,
              feature_stride: int = 4) -> Tensor:
    """[B,d,Hf,Wf] features, R pixel boxes -> [R,d,out,out] object features."""
    features = nc.as_tensor(features)
    pts = roi_points(boxes, out_size, feature_stride)
    sampled = nc.sample_bilinear(features, np.asarray(batch_index), pts)
    return sampled.reshape(len(pts), features.shape[1], out_size, out_size)


def roi_align_nhwc(features: Tensor, boxes: np.ndarray, batch_index: np.ndarray, out_size: int = 5,
                   feature_stride: int = 4) -> Tensor:
    """[B,Hf,Wf,d] channels-last features -> [R,out,out,d]."""
    features = nc.as_tensor(features)
    pts = roi_points(boxes, out_size, feature_stride)
    sampled = nc.sample_bilinear(features, np.asarray(batch_index), pts, layout="nhwc")
    return sampled.reshape(len(pts), out_size, out_size, features.shape[3])


def roi_feature(feature: Tensor, box, out_size: int = 5, feature_stride: int = 4) -> Tensor:
    """Single-map convenience: [d,Hf,Wf] and one pixel box -> [d,out,out]."""
    feature = nc.as_tensor(feature)
    if box[2] <= 0 or box[3] <= 0:
        raise ValueError("roi_feature: box width and height must be positive")
    out = roi_align(feature.reshape((1,) + feature.shape), np.asarray(box)[None], np.zeros(1, np.intp),
                    out_size, feature_stride)
    return out.reshape(out.shape[1:])
