"""Adam with L2 weight decay and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .nn import Parameter


class NonFiniteGradient(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter {name!r}; optimizer step aborted")
        self.param_name = name


def adam_step(params: Iterable[Parameter], lr: float, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8, weight_decay: float = 0.0) -> None:
    """One bias-corrected Adam update; weight decay is added to the gradient.

    Gradients are checked for finiteness before any parameter is touched, and
    are reset to zero after the update.
    """
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise NonFiniteGradient(p.name or f"param[{i}]")
    b1, b2 = betas
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if weight_decay:
            g = g + weight_decay * p.data
        p.step_count += 1
        tmp = np.multiply(g, 1 - b1)
        p.adam_m *= b1
        p.adam_m += tmp
        np.multiply(g, g, out=tmp)
        tmp *= 1 - b2
        p.adam_v *= b2
        p.adam_v += tmp
        # lr * m_hat / (sqrt(v_hat) + eps), evaluated in place
        bc1 = 1 - b1 ** p.step_count
        bc2 = 1 - b2 ** p.step_count
        np.sqrt(p.adam_v, out=tmp)
        tmp *= 1.0 / math.sqrt(bc2)
        tmp += eps
        np.divide(p.adam_m, tmp, out=tmp)
        tmp *= lr / bc1
        p.data -= tmp
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        else:
            p.grad.fill(0)


def cosine_lr(iter: int, max_iter: int, base_lr: float) -> float:  # noqa: A002
    if max_iter < 1 or not 0 <= iter <= max_iter:
        raise ValueError(f"cosine_lr: need 0 <= iter <= max_iter, got iter={iter}, max_iter={max_iter}")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * iter / max_iter))
