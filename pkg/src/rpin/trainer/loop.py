"""The training loop: sample, roll out, discounted loss, backward, Adam."""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .. import numcore as nc
from ..model import RPIN, ModelConfig
from ..simworld import Dataset, load_dataset
from . import checkpoint as ckpt_io
from .data import sample_batch
from .loss import trajectory_loss

SNAPSHOT_DIR = "snapshots"
METRICS_FILE = "metrics.jsonl"
CHECKPOINT_FILE = "model.ckpt"


@dataclass
class TrainConfig:
    data_path: str = ""
    eval_path: str | None = None  # defaults to the training set
    kind: str = "cin"
    d: int = 64
    N: int = 4
    T_train: int = 20
    batch_size: int = 8
    max_iter: int = 20000
    base_lr: float = 2e-3
    weight_decay: float = 1e-6
    mask_loss_enabled: bool = False
    seed: int = 0
    eval_interval: int = 500
    eval_episodes: int = 32
    snapshot_interval: int = 5000

    @property
    def k(self) -> int:
        return self.N

    def validate(self) -> "TrainConfig":
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.T_train < 1:
            raise ValueError(f"T_train must be >= 1, got {self.T_train}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.base_lr >= 0 and math.isfinite(self.base_lr)):
            raise ValueError(f"base_lr must be a finite nonnegative number, got {self.base_lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.eval_interval < 0 or self.snapshot_interval < 0 or self.eval_episodes < 1:
            raise ValueError("eval_interval and snapshot_interval must be >= 0 and eval_episodes >= 1")
        ModelConfig(kind=self.kind, d=self.d, k=self.N)
        return self

    def model_config(self, width: int = 64, height: int = 64) -> ModelConfig:
        return ModelConfig(kind=self.kind, d=self.d, k=self.N, width=width, height=height,
                           mask_head=self.mask_loss_enabled)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown training config keys: {unknown}")
        return cls(**d)


class TrainingDiverged(FloatingPointError):
    def __init__(self, iteration: int, what: str):
        super().__init__(f"non-finite {what} at iteration {iteration}; training aborted")
        self.iteration = iteration


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    model: RPIN
    metrics: list[dict]
    out_dir: Path
    losses: list[float]


def check_horizon(dataset: Dataset, config: TrainConfig) -> None:
    if config.N + config.T_train > dataset.T_ep:
        raise ValueError(f"N={config.N} + T_train={config.T_train} exceeds episode length {dataset.T_ep} "
                         f"of dataset {dataset.path}")


def within_error(model: RPIN, dataset: Dataset, N: int, T: int, n_episodes: int, batch_size: int = 16) -> float:
    """Scaled center error over the first T steps from offset 0 (eval-mode batchnorm)."""
    from ..evalbench import collect, model_predictor, pred_error

    pred, gt = collect(model_predictor(model), dataset, N, T, batch_size, n_episodes=n_episodes)
    return pred_error(pred, gt)


def _append_metric(path: Path, record: dict) -> None:
    with open(path, "a", encoding="utf-8") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def train(config: TrainConfig, out_dir, resume: bool = False, dataset: Dataset | None = None,
          eval_dataset: Dataset | None = None, log=None) -> TrainResult:
    """Run ``max_iter`` iterations; writes metrics.jsonl, snapshots/ and model.ckpt under ``out_dir``.

    Iteration i (0-based) uses learning rate cosine_lr(i, max_iter, base_lr) and
    discount weights at iter = i + 1, so the final iteration weights every step 1.
    """
    config.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(config.data_path) if dataset is None else dataset
    check_horizon(dataset, config)
    if eval_dataset is None:
        eval_dataset = load_dataset(config.eval_path) if config.eval_path else dataset
    if config.N + config.T_train > eval_dataset.T_ep:
        raise ValueError(f"eval episodes of length {eval_dataset.T_ep} are shorter than N + T_train")

    model = RPIN(config.model_config(dataset.config.width, dataset.config.height), seed=config.seed)
    rng = nc.Rng(config.seed).spawn(1)
    start = 0
    metrics_path = out / METRICS_FILE
    final_path = out / CHECKPOINT_FILE
    if resume:
        latest = _latest_checkpoint(out)
        if latest is None:
            raise FileNotFoundError(f"--resume given but no checkpoint found in {out}")
        ck = ckpt_io.load(latest)
        if ck.train_config and ck.train_config.get("max_iter") != config.max_iter:
            raise ValueError("cannot resume with a different max_iter (the schedule would change)")
        ckpt_io.load_into(model, ck, with_optimizer=True)
        if ck.rng_state is not None:
            rng.state = ck.rng_state
        start = ck.iter
        _truncate_metrics(metrics_path, start)
    elif metrics_path.exists():
        metrics_path.unlink()

    params = model.parameters()
    model.train()
    losses: list[float] = []
    metrics: list[dict] = []
    window: list[float] = []
    t0 = time.time()
    for i in range(start, config.max_iter):
        batch = sample_batch(dataset, rng, config.N, config.T_train, config.batch_size,
                             with_masks=config.mask_loss_enabled)
        pred = model.rollout(batch.images, batch.boxes, config.T_train, with_masks=config.mask_loss_enabled)
        loss = trajectory_loss(pred, batch.gt_boxes, i + 1, config.max_iter, batch.gt_masks,
                               mask_loss=config.mask_loss_enabled)
        value = loss.item()
        if not math.isfinite(value):
            _append_metric(metrics_path, {"iter": i + 1, "error": "non-finite loss"})
            raise TrainingDiverged(i + 1, "loss")
        loss.backward()
        lr = nc.cosine_lr(i, config.max_iter, config.base_lr)
        try:
            nc.adam_step(params, lr, weight_decay=config.weight_decay)
        except nc.NonFiniteGradient as exc:
            _append_metric(metrics_path, {"iter": i + 1, "error": str(exc)})
            raise TrainingDiverged(i + 1, "gradient") from exc
        losses.append(value)
        window.append(value)
        done = i + 1
        last = done == config.max_iter
        if (config.eval_interval and done % config.eval_interval == 0) or last:
            err = within_error(model, eval_dataset, config.N, config.T_train, config.eval_episodes)
            model.train()
            rec = {"iter": done, "lr": lr, "train_loss": float(np.mean(window)), "eval_error": err,
                   "elapsed_s": round(time.time() - t0, 3)}
            window = []
            _append_metric(metrics_path, rec)
            metrics.append(rec)
            if log is not None:
                log(rec)
        if config.snapshot_interval and done % config.snapshot_interval == 0 and not last:
            snap = ckpt_io.from_model(model, done, config.to_dict(), rng.state)
            ckpt_io.save(snap, out / SNAPSHOT_DIR / f"iter_{done:07d}.ckpt")

    final = ckpt_io.from_model(model, config.max_iter, config.to_dict(), rng.state)
    ckpt_io.save(final, final_path)
    model.eval()
    return TrainResult(final, model, metrics, out, losses)


def _latest_checkpoint(out: Path) -> Path | None:
    snaps = sorted((out / SNAPSHOT_DIR).glob("iter_*.ckpt")) if (out / SNAPSHOT_DIR).is_dir() else []
    candidates = snaps + ([out / CHECKPOINT_FILE] if (out / CHECKPOINT_FILE).is_file() else [])
    if not candidates:
        return None
    return max(candidates, key=lambda p: ckpt_io.load(p).iter)


def _truncate_metrics(path: Path, upto: int) -> None:
    """Drop metric records written after the resumed checkpoint."""
    if not path.exists():
        return
    keep = [line for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip() and json.loads(line).get("iter", 0) <= upto]
    path.write_text("".join(line + "\n" for line in keep), encoding="utf-8")
