"""Hourglass image encoder producing stride-4 feature maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numcore as nc
from ..numcore import BatchNorm2d, Conv2d, Module, Rng, Tensor


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    height: int = 64
    width: int = 64
    hourglass_depth: int = 3
    feature_stride: int = 4

    def __post_init__(self):
        div = self.feature_stride * 2 ** self.hourglass_depth
        if self.height % div or self.width % div:
            raise ValueError(f"input size {self.height}x{self.width} must be divisible by {div}")
        if self.d % 4:
            raise ValueError(f"d={self.d} must be divisible by 4")
        if self.feature_stride != 4:
            raise ValueError("feature_stride is fixed at 4")

    @property
    def feature_size(self) -> tuple[int, int]:
        return (self.height // self.feature_stride, self.width // self.feature_stride)


# all encoder layers run channels-last; only the public forward converts
_L = "nhwc"


class ResBlock(Module):
    """Pre-activation residual block: (BN -> ReLU -> 3x3 conv) x 2 plus skip."""

    def __init__(self, c_in: int, c_out: int, rng: Rng, stride: int = 1, dtype=np.float32):
        self.bn1 = BatchNorm2d(c_in, dtype=dtype, layout=_L)
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, dtype=dtype, layout=_L)
        self.bn2 = BatchNorm2d(c_out, dtype=dtype, layout=_L)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, dtype=dtype, layout=_L)
        self.proj = Conv2d(c_in, c_out, 1, rng, stride=stride, dtype=dtype, layout=_L) \
            if stride != 1 or c_in != c_out else None

    def forward(self, x: Tensor) -> Tensor:
        a = nc.relu(self.bn1(x))
        h = self.conv2(nc.relu(self.bn2(self.conv1(a))))
        skip = self.proj(a) if self.proj is not None else x
        return h + skip


class Hourglass(Module):
    def __init__(self, d: int, depth: int, rng: Rng, dtype=np.float32):
        self.down = [ResBlock(d, d, rng, stride=2, dtype=dtype) for _ in range(depth)]
        self.up = [ResBlock(d, d, rng, dtype=dtype) for _ in range(depth)]

    def forward(self, x: Tensor) -> Tensor:
        skips = [x]
        for block in self.down:
            skips.append(block(skips[-1]))
        u = skips.pop()
        for block in self.up:
            u = nc.upsample_nearest2(block(u), layout=_L) + skips.pop()
        return u


class Encoder(Module):
    """7x7/2 conv, three residual blocks at d/4, 2x2 max pool, lift to d, one hourglass."""

    def __init__(self, config: EncoderConfig, rng: Rng, dtype=np.float32):
        d = config.d
        self.config = config
        self.stem = Conv2d(3, d // 4, 7, rng, stride=2, dtype=dtype, layout=_L)
        self.stem_blocks = [ResBlock(d // 4, d // 4, rng, dtype=dtype) for _ in range(3)]
        self.bn_lift = BatchNorm2d(d // 4, dtype=dtype, layout=_L)
        self.lift = Conv2d(d // 4, d, 1, rng, dtype=dtype, layout=_L)
        self.hourglass = Hourglass(d, config.hourglass_depth, rng, dtype=dtype)
        self.bn_out = BatchNorm2d(d, dtype=dtype, layout=_L)
        self.head = Conv2d(d, d, 1, rng, dtype=dtype, layout=_L)

    def features(self, images) -> Tensor:
        """[B,3,H,W] images -> [B,H/4,W/4,d] channels-last, non-negative features."""
        images = nc.as_tensor(images, dtype=self.head.weight.dtype)
        cfg = self.config
        if images.ndim != 4 or images.shape[1:] != (3, cfg.height, cfg.width):
            raise ValueError(f"encoder expects images of shape [B,3,{cfg.height},{cfg.width}], got {images.shape}")
        # rendered pixels lie in [0, 1]; a fixed affine map centres them
        x = Tensor(np.ascontiguousarray(images.data.transpose(0, 2, 3, 1)) * 2.0 - 1.0) \
            if not images.requires_grad else nc.transpose(images, (0, 2, 3, 1)) * 2.0 - 1.0
        x = self.stem(x)
        for block in self.stem_blocks:
            x = block(x)
        x = nc.maxpool2(x, layout=_L)
        x = self.lift(nc.relu(self.bn_lift(x)))
        x = self.hourglass(x)
        return nc.relu(self.head(nc.relu(self.bn_out(x))))

    def forward(self, images) -> Tensor:
        """[B,3,H,W] (or [3,H,W]) -> [B,d,H/4,W/4] (or [d,H/4,W/4]), non-negative."""
        images = nc.as_tensor(images)
        single = images.ndim == 3
        if single:
            images = images.reshape((1,) + images.shape)
        x = nc.transpose(self.features(images), (0, 3, 1, 2))
        if single:
            x = x.reshape(x.shape[1:])
        return x
