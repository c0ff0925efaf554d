"""Discounted trajectory loss."""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from ..model import TrajectoryPrediction
from ..numcore import Tensor


def discount(iter: int, max_iter: int, t: int) -> float:  # noqa: A002
    """Horizon weight lambda_t = (iter / max_iter) ** t.

    Early in training only the first few predicted steps carry weight; at
    ``iter == max_iter`` every step is weighted 1.
    """
    if t < 1:
        raise ValueError(f"discount: horizon index t must be >= 1, got {t}")
    if max_iter < 1 or not 0 <= iter <= max_iter:
        raise ValueError(f"discount: need 0 <= iter <= max_iter, got iter={iter}, max_iter={max_iter}")
    if iter == max_iter:
        return 1.0
    return (iter / max_iter) ** t


def discounts(iter: int, max_iter: int, T: int) -> np.ndarray:  # noqa: A002
    return np.array([discount(iter, max_iter, t) for t in range(1, T + 1)])


def _mask_entropy(target: np.ndarray) -> float:
    q = target.reshape(target.shape[:-2] + (-1,)).astype(np.float64)
    q = q / q.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(q > 0, q * np.log(q), 0.0)
    return float(-plogp.sum())


def trajectory_loss(pred: TrajectoryPrediction, gt_boxes, iter: int, max_iter: int,  # noqa: A002
                    gt_masks=None, mask_loss: bool = False) -> Tensor:
    """Sum over steps t and objects of lambda_t * (||B_hat - B||^2 + mask term), batch-mean.

    Boxes are normalized (cx, cy, w, h) 4-vectors. The mask term is the
    spatial cross-entropy against the mask normalized to sum 1, minus the
    target's own entropy (a constant), so a perfect prediction scores 0.
    """
    gt_boxes = np.asarray(gt_boxes)
    B, T = pred.boxes.shape[:2]
    if gt_boxes.shape != pred.boxes.shape:
        raise ValueError(f"loss: predicted boxes {pred.boxes.shape} vs ground truth {gt_boxes.shape}; "
                         "horizons and object counts must match")
    lam = discounts(iter, max_iter, T).astype(pred.boxes.dtype)
    diff = pred.boxes - Tensor(gt_boxes.astype(pred.boxes.dtype))
    per_step = (diff * diff).sum(axis=(0, 2, 3))  # [T]
    total = (per_step * Tensor(lam)).sum()
    if mask_loss:
        if pred.masks is None or gt_masks is None:
            raise ValueError("loss: mask loss enabled but predicted or ground-truth masks are missing")
        gt_masks = np.asarray(gt_masks)
        if gt_masks.shape != pred.masks.shape:
            raise ValueError(f"loss: predicted masks {pred.masks.shape} vs ground truth {gt_masks.shape}")
        for t in range(T):
            if lam[t] == 0:
                continue
            ce = nc.softmax_xent_2d(pred.masks[:, t], gt_masks[:, t]) - _mask_entropy(gt_masks[:, t])
            total = total + ce * float(lam[t])
    return total * (1.0 / B)


loss = trajectory_loss
