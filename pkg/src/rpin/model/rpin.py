"""Region-proposal interaction network: encoder + RoI features + dynamics + decoders."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import numcore as nc
from ..numcore import Linear, Module, Rng, Tensor
from .encoder import Encoder, EncoderConfig
from .interaction import KINDS, InteractionNetwork
from .roi import roi_align_nhwc

MASK_SIZE = 21


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "cin"
    d: int = 64
    k: int = 4
    roi_size: int = 5
    height: int = 64
    width: int = 64
    hourglass_depth: int = 3
    mask_head: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.k < 1 or self.roi_size < 1:
            raise ValueError("k and roi_size must be positive")
        self.encoder_config()  # validates the input size

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, height=self.height, width=self.width,
                             hourglass_depth=self.hourglass_depth)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


class MLPHead(Module):
    """flatten -> linear to d -> ReLU -> linear to n_out."""

    def __init__(self, d_in: int, hidden: int, n_out: int, rng: Rng, dtype=np.float32):
        self.fc1 = Linear(d_in, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, n_out, rng, dtype=dtype)

    def forward(self, feats: Tensor) -> Tensor:
        flat = feats.reshape(feats.shape[:-3] + (-1,))
        return self.fc2(nc.relu(self.fc1(flat)))


def decode_box(feature: Tensor, head: MLPHead) -> Tensor:
    """[..., 5, 5, d] channels-last object features -> [..., 4] normalized (cx, cy, w, h)."""
    return head(feature)


def decode_mask(feature: Tensor, head: MLPHead) -> Tensor:
    """[..., 5, 5, d] channels-last object features -> [..., 21, 21] mask logits."""
    out = head(feature)
    return out.reshape(out.shape[:-1] + (MASK_SIZE, MASK_SIZE))


@dataclass
class TrajectoryPrediction:
    boxes: Tensor  # [B, T, m, 4] normalized
    masks: Tensor | None = None  # [B, T, m, 21, 21] logits

    @property
    def T(self) -> int:
        return self.boxes.shape[1]

    def centers(self) -> np.ndarray:
        return self.boxes.data[..., :2]


class RPIN(Module):
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        rng = Rng(seed)
        self.config = config
        self.encoder = Encoder(config.encoder_config(), rng, dtype=dtype)
        self.dynamics = InteractionNetwork(config.kind, config.d, config.k, rng,
                                           (config.roi_size, config.roi_size), dtype=dtype)
        feat = config.d * config.roi_size ** 2
        self.box_head = MLPHead(feat, config.d, 4, rng, dtype=dtype)
        self.mask_head = MLPHead(feat, config.d, MASK_SIZE * MASK_SIZE, rng, dtype=dtype) \
            if config.mask_head else None
        self.name_parameters()

    @property
    def dtype(self):
        return self.box_head.fc1.weight.dtype

    def object_features(self, images, boxes: np.ndarray) -> list[Tensor]:
        """Encode N frames per sample and pool one RoI per object.

        images: [B, N, 3, H, W]; boxes: [B, N, m, 4] in pixels.
        Returns N channels-last tensors of shape [B*m, s, s, d] (objects batch-major).
        """
        images = nc.as_tensor(images, dtype=self.dtype)
        B, N = images.shape[:2]
        m = boxes.shape[2]
        feats = self.encoder.features(images.reshape((B * N,) + images.shape[2:]))
        s = self.config.roi_size
        # rows ordered (b, n, i); pool everything at once then regroup per frame
        batch_index = np.repeat(np.arange(B * N), m)
        pooled = roi_align_nhwc(feats, boxes.reshape(-1, 4), batch_index, s)
        pooled = pooled.reshape((B, N, m) + pooled.shape[1:])
        return [pooled[:, n].reshape((B * m,) + pooled.shape[3:]) for n in range(N)]

    def rollout(self, images, boxes, T: int, with_masks: bool | None = None) -> TrajectoryPrediction:
        """Predict T future steps from N = k observed frames.

        images: [B, N, 3, H, W] (or [N, 3, H, W]); boxes: [B, N, m, 4] pixels.
        Prediction stays in feature space: predicted features are fed back into
        the history without re-pooling.
        """
        boxes = np.asarray(boxes, dtype=np.float64)
        images = images if isinstance(images, Tensor) else np.asarray(images)
        if images.ndim == 4:
            images = images[None]
            boxes = boxes[None]
        B, N = images.shape[:2]
        m = boxes.shape[2]
        if N != self.config.k:
            raise ValueError(f"rollout needs N = k = {self.config.k} input frames, got {N}")
        if boxes.shape[:2] != (B, N) or boxes.shape[-1] != 4:
            raise ValueError(f"boxes must be [B, N, m, 4], got {boxes.shape}")
        with_masks = self.mask_head is not None if with_masks is None else with_masks
        if with_masks and self.mask_head is None:
            raise ValueError("this model has no mask head")
        if T == 0:
            empty = Tensor(np.zeros((B, 0, m, 4), dtype=self.dtype))
            return TrajectoryPrediction(empty, Tensor(np.zeros((B, 0, m, MASK_SIZE, MASK_SIZE), self.dtype))
                                        if with_masks else None)
        dyn = self.dynamics
        maps = dyn.prepare()
        xs = self.object_features(images, boxes)
        # z is cached per history entry; identical to recomputing it every step
        zs = [dyn.interact(dyn.from_nhwc(x), B, m, maps) for x in xs]
        preds = []
        for _ in range(T):
            x_next = dyn.predict(zs[::-1][:dyn.k], maps)
            preds.append(dyn.to_nhwc(x_next))
            if len(preds) < T:
                zs = zs[1:] + [dyn.interact(x_next, B, m, maps)]
        feats = nc.stack(preds, axis=1)  # [B*m, T, s, s, d]
        feats = feats.reshape((B, m, T) + feats.shape[2:]).transpose((0, 2, 1, 3, 4, 5))
        out_boxes = decode_box(feats, self.box_head)
        out_masks = decode_mask(feats, self.mask_head) if with_masks else None
        return TrajectoryPrediction(out_boxes, out_masks)

    forward = rollout


def rollout_model(images, boxes, T: int, model: RPIN, with_masks: bool | None = None) -> TrajectoryPrediction:
    return model.rollout(images, boxes, T, with_masks)
