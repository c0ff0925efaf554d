"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass
class GradCheckReport:
    max_rel_error: list[float]
    checked: list[int]
    excluded: list[int]
    tol: float
    details: list[dict] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e < self.tol for e in self.max_rel_error)

    def __str__(self) -> str:
        parts = [f"input {i}: max rel err {e:.3e} ({c} checked, {x} kinks skipped)"
                 for i, (e, c, x) in enumerate(zip(self.max_rel_error, self.checked, self.excluded))]
        return "; ".join(parts)


def _eval(f, inputs):
    ops._kink_trace = []
    try:
        out = f(*inputs)
        return float(out.data), ops._kink_trace
    finally:
        ops._kink_trace = None


def _same_branches(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], tol: float = 1e-5,
               h: float = 1e-5, max_checks: int | None = None, seed: int = 0,
               atol: float = 1e-8) -> GradCheckReport:
    """Compare reverse-mode gradients of scalar ``f(*inputs)`` to central differences.

    Perturbations that flip any relu sign or maxpool winner between the +h and
    -h evaluations sit on a kink and are skipped. The relative error of an
    entry is ``|a - n| / max(|a|, |n|, 1e-3 * max|a|)`` so that entries whose
    gradient is negligible compared to the rest of the tensor are judged on
    an absolute scale. Entries where analytic and numeric values agree to
    within ``atol`` count as exact; this covers gradients that vanish
    identically (a bias feeding a batch-normalized layer) and where both sides
    are rounding noise. ``max_checks`` samples that many entries per input.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")
        if not t.data.flags.c_contiguous:
            t.data = np.ascontiguousarray(t.data)  # perturbations go through a flat view
        t.zero_grad()
    out = f(*inputs)
    if out.size != 1:
        raise ValueError("grad_check needs a scalar-valued function")
    out.backward()
    analytic = [t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    errors, checked, excluded, details = [], [], [], []
    for k, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idxs = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        a_flat = analytic[k].reshape(-1)
        floor = 1e-3 * float(np.max(np.abs(a_flat))) if a_flat.size else 0.0
        worst, n_ok, n_kink = 0.0, 0, 0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            fp, tp = _eval(f, inputs)
            flat[i] = orig - h
            fm, tm = _eval(f, inputs)
            flat[i] = orig
            if not _same_branches(tp, tm):
                n_kink += 1
                continue
            num = (fp - fm) / (2 * h)
            a = float(a_flat[i])
            denom = max(abs(a), abs(num), floor, 1e-300)
            err = 0.0 if abs(a - num) <= atol else abs(a - num) / denom
            n_ok += 1
            if err > worst:
                worst = err
                details.append({"input": k, "index": int(i), "analytic": a, "numeric": num})
        errors.append(worst)
        checked.append(n_ok)
        excluded.append(n_kink)
    return GradCheckReport(errors, checked, excluded, tol, details)
