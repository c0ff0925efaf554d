"""Center-distance error metric and the evaluation protocols."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import numcore as nc
from ..simworld import Dataset
from ..trainer.data import Batch, make_batch, max_offset

SCALE = 1000.0

# A predictor maps (batch, T) to normalized boxes [B, T, m, 4].
Predictor = Callable[[Batch, int], np.ndarray]


def pred_error(pred_centers, gt_centers, window: tuple[int, int] | None = None) -> float:
    """Mean squared center distance over steps in ``window``, objects and episodes, times 1000.

    Inputs are normalized [E, T, m, 2] centers (extra trailing box entries are ignored).
    """
    p = np.asarray(pred_centers, dtype=np.float64)[..., :2]
    g = np.asarray(gt_centers, dtype=np.float64)[..., :2]
    if p.shape != g.shape:
        raise ValueError(f"pred_error: shape mismatch {p.shape} vs {g.shape}")
    a, b = (0, p.shape[1]) if window is None else window
    if not 0 <= a < b <= p.shape[1]:
        raise ValueError(f"pred_error: empty or out-of-range window [{a}, {b}) for horizon {p.shape[1]}")
    d = p[:, a:b] - g[:, a:b]
    return float((d * d).sum(axis=-1).mean() * SCALE)


def error_curve(pred_centers, gt_centers) -> np.ndarray:
    """Scaled error per step t, averaged over episodes and objects -> [T]."""
    p = np.asarray(pred_centers, dtype=np.float64)[..., :2]
    g = np.asarray(gt_centers, dtype=np.float64)[..., :2]
    d = p - g
    return (d * d).sum(axis=-1).mean(axis=(0, 2)) * SCALE


# ---------------------------------------------------------------- predictors

def model_predictor(model) -> Predictor:
    """Wrap an RPIN: eval-mode batchnorm, no graph recording."""
    def predict(batch: Batch, T: int) -> np.ndarray:
        was_training = model.training
        model.eval()
        try:
            with nc.no_grad():
                out = model.rollout(batch.images, batch.boxes, T, with_masks=False)
        finally:
            model.train(was_training)
        return out.boxes.data.astype(np.float64)
    return predict


def static_predictor(width: int = 64, height: int = 64) -> Predictor:
    """Every future box equals the last observed one."""
    scale = np.array([width, height, width, height], dtype=np.float64)

    def predict(batch: Batch, T: int) -> np.ndarray:
        last = batch.boxes[:, -1] / scale  # [B, m, 4]
        return np.repeat(last[:, None], T, axis=1)
    return predict


def gt_predictor(batch: Batch, T: int) -> np.ndarray:
    """Echoes the ground truth (a sanity predictor with zero error)."""
    return batch.gt_boxes[:, :T].astype(np.float64)


# ---------------------------------------------------------------- protocols

def collect(predictor: Predictor, dataset: Dataset, N: int, T: int, batch_size: int = 16,
            offset: int = 0, n_episodes: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Roll the predictor over the window starting at ``offset`` of each episode.

    Returns (pred, gt) normalized boxes, each [E, T, m, 4].
    """
    if offset < 0 or offset > max_offset(dataset.T_ep, N, T):
        raise ValueError(f"episodes of length {dataset.T_ep} are too short for offset {offset} + "
                         f"N={N} + T={T}")
    E = len(dataset) if n_episodes is None else min(n_episodes, len(dataset))
    cfg = dataset.config
    preds, gts = [], []
    for start in range(0, E, batch_size):
        idx = np.arange(start, min(start + batch_size, E))
        batch = make_batch(dataset.states, idx, np.full(len(idx), offset), N, T, cfg.width, cfg.height)
        pred = np.asarray(predictor(batch, T), dtype=np.float64)
        if pred.shape != batch.gt_boxes.shape:
            raise ValueError(f"predictor returned {pred.shape}, expected {batch.gt_boxes.shape}")
        preds.append(pred)
        gts.append(batch.gt_boxes.astype(np.float64))
    return np.concatenate(preds), np.concatenate(gts)


@dataclass
class ProtocolResult:
    error: float
    window: tuple[int, int]
    curve: list[float]
    episodes: int
    static_error: float | None = None


def _horizon_errors(predictor, dataset, N, T_total, window, batch_size, with_static):
    pred, gt = collect(predictor, dataset, N, T_total, batch_size)
    res = ProtocolResult(pred_error(pred, gt, window), window, error_curve(pred, gt).tolist(), len(pred))
    if with_static:
        cfg = dataset.config
        sp, sg = collect(static_predictor(cfg.width, cfg.height), dataset, N, T_total, batch_size)
        res.static_error = pred_error(sp, sg, window)
    return res


def eval_within(predictor, dataset: Dataset, T_train: int, N: int = 4, batch_size: int = 16,
                with_static: bool = True) -> ProtocolResult:
    """Error over t in [0, T_train), sliced from a single 2*T_train rollout."""
    predictor = _as_predictor(predictor)
    return _horizon_errors(predictor, dataset, N, 2 * T_train, (0, T_train), batch_size, with_static)


def eval_beyond(predictor, dataset: Dataset, T_train: int, N: int = 4, batch_size: int = 16,
                with_static: bool = True) -> ProtocolResult:
    """Error over t in [T_train, 2*T_train) from the same rollout."""
    predictor = _as_predictor(predictor)
    return _horizon_errors(predictor, dataset, N, 2 * T_train, (T_train, 2 * T_train), batch_size, with_static)


def eval_generalization(predictor, dataset: Dataset, T_train: int, N: int = 4, batch_size: int = 16,
                        with_static: bool = True) -> ProtocolResult:
    """Error over t in [0, 2*T_train) on episodes with a different ball count."""
    predictor = _as_predictor(predictor)
    return _horizon_errors(predictor, dataset, N, 2 * T_train, (0, 2 * T_train), batch_size, with_static)


def eval_horizons(predictor, dataset: Dataset, T_train: int, N: int = 4, batch_size: int = 16,
                  with_static: bool = True) -> dict[str, ProtocolResult]:
    """Within and beyond errors from one shared 2*T_train rollout."""
    predictor = _as_predictor(predictor)
    pred, gt = collect(predictor, dataset, N, 2 * T_train, batch_size)
    curve = error_curve(pred, gt).tolist()
    out = {name: ProtocolResult(pred_error(pred, gt, w), w, curve, len(pred))
           for name, w in (("within", (0, T_train)), ("beyond", (T_train, 2 * T_train)))}
    if with_static:
        cfg = dataset.config
        sp, sg = collect(static_predictor(cfg.width, cfg.height), dataset, N, 2 * T_train, batch_size)
        for r in out.values():
            r.static_error = pred_error(sp, sg, r.window)
    return out


def _as_predictor(p) -> Predictor:
    if hasattr(p, "rollout"):
        return model_predictor(p)
    return p


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    model_id: str
    config_hash: str
    protocols: dict[str, ProtocolResult] = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return max((r.episodes for r in self.protocols.values()), default=0)

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "config_hash": self.config_hash,
            "episodes": self.episodes,
            "protocols": {k: {"error": r.error, "window": list(r.window), "curve": r.curve,
                              "episodes": r.episodes, "static_error": r.static_error}
                          for k, r in self.protocols.items()},
        }


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode("utf-8")).hexdigest()[:16]


def format_table(report: EvalReport) -> str:
    """Plain-text table: one row per model, one column per protocol."""
    names = [n for n in ("within", "beyond", "generalization") if n in report.protocols]
    names += [n for n in report.protocols if n not in names]
    heads = [f"{n} [{report.protocols[n].window[0]},{report.protocols[n].window[1]})" for n in names]
    width = max([len(report.model_id), len("static")] + [0]) + 2
    lines = ["".join(["model".ljust(width)] + [h.rjust(24) for h in heads])]
    lines.append("".join([report.model_id.ljust(width)] + [f"{report.protocols[n].error:24.3f}" for n in names]))
    if all(report.protocols[n].static_error is not None for n in names):
        lines.append("".join(["static".ljust(width)] + [f"{report.protocols[n].static_error:24.3f}" for n in names]))
    lines.append(f"(squared center error x 1000, {report.episodes} episodes)")
    return "\n".join(lines) + "\n"


def emit_report(report: EvalReport, path) -> dict:
    """Write ``report.json``, ``report.txt`` and one ``curve_<protocol>.csv`` per protocol into ``path``."""
    from pathlib import Path

    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    data = report.to_dict()
    (out / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(format_table(report), encoding="utf-8")
    for name, r in report.protocols.items():
        rows = ["t,error"] + [f"{t},{e:.6f}" for t, e in enumerate(r.curve)]
        (out / f"curve_{name}.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    return data
