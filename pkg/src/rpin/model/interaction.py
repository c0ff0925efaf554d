"""Interaction networks over object features.

For objects i at one timestep::

    e_i = f_A(f_O(x_i) + sum_{j != i} f_R(x_i, x_j))
    z_i = f_Z(x_i, e_i)
    x_i' = f_P(z_i^t, z_i^{t-1}, ..., z_i^{t-k+1})

In the convolutional variant every f is a 3x3 convolution (pairs and
histories are concatenated along channels) followed by ReLU; in the vector
variant every f is an affine map on flattened d*h*w features followed by
ReLU. f_R acts on ``[x_i, x_j]``, and because the map is linear before its
ReLU it splits as ``W_R[:, :d] * x_i + W_R[:, d:] * x_j``; both halves are
computed once per object and combined per ordered pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import numcore as nc
from ..numcore import Module, Parameter, Rng, Tensor

KINDS = ("cin", "in")


@dataclass
class ObjectFeatureSet:
    t: int
    features: Tensor  # [m, d, h, w] (or [B, m, d, h, w])
    boxes_in: np.ndarray | None = None


def _init(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(dtype)


class InteractionNetwork(Module):
    """Convolutional (``kind='cin'``) or vector (``kind='in'``) interaction network."""

    def __init__(self, kind: str, d: int, k: int, rng: Rng, spatial: tuple[int, int] = (5, 5),
                 dtype=np.float32):
        if kind not in KINDS:
            raise ValueError(f"unknown interaction network kind {kind!r}; expected one of {KINDS}")
        self.kind, self.d, self.k, self.spatial = kind, d, k, tuple(spatial)
        if kind == "cin":
            c = d
            shape = lambda n_in: (d, n_in * d, 3, 3)  # noqa: E731
            fan = lambda n_in: n_in * d * 9  # noqa: E731
        else:
            c = d * spatial[0] * spatial[1]
            shape = lambda n_in: (c, n_in * c)  # noqa: E731
            fan = lambda n_in: n_in * c  # noqa: E731
        self.width = c
        for name, n_in in (("R", 2), ("O", 1), ("A", 1), ("Z", 2), ("P", k)):
            setattr(self, f"W_{name}", Parameter(_init(rng, shape(n_in), fan(n_in), dtype)))
            setattr(self, f"b_{name}", Parameter(_init(rng, (c,), fan(n_in), dtype)))

    # -- representation ----------------------------------------------------
    # Internally objects are channels-last maps [n, h, w, d] (CIN) or flat
    # vectors [n, h*w*d] (IN); either way the channel axis is the last one.
    def from_nhwc(self, x: Tensor) -> Tensor:
        return x if self.kind == "cin" else x.reshape(x.shape[0], -1)

    def to_nhwc(self, x: Tensor) -> Tensor:
        return x if self.kind == "cin" else x.reshape((x.shape[0],) + self.spatial + (self.d,))

    def _affine(self, maps: dict, name: str, x: Tensor) -> Tensor:
        w, b, wt = maps[name]
        if self.kind == "cin":
            return nc.conv2d(x, w, b, stride=1, padding=1, layout="nhwc")
        return nc.linear(x, w, b, weight_t=wt)

    def prepare(self) -> dict:
        """Weights for one rollout: name -> (weight, bias, transposed copy or None).

        f_R acts on [x_i, x_j] and f_O on x_i; their weights are stacked as
        [W_R(x_i half); W_R(x_j half); W_O] so one map serves both. For the
        vector variant a contiguous W^T is made once and reused by every step's
        backward pass.
        """
        c = self.width
        w = nc.concat([self.W_R[:, :c], self.W_R[:, c:], self.W_O], axis=0)
        b = nc.concat([Tensor(np.zeros(c, dtype=self.b_R.dtype)), self.b_R, self.b_O], axis=0)
        maps = {"RO": (w, b), "A": (self.W_A, self.b_A), "Z": (self.W_Z, self.b_Z), "P": (self.W_P, self.b_P)}
        vector = self.kind == "in" and nc.is_grad_enabled()
        return {k: (w, b, np.ascontiguousarray(w.data.T) if vector else None) for k, (w, b) in maps.items()}

    # -- dataflow --------------------------------------------------------------
    def interact(self, x: Tensor, batch: int, m: int, maps: dict | None = None) -> Tensor:
        """Internal object features [batch*m, ...] at one timestep -> z of the same shape.

        ``maps`` (from :meth:`prepare`) lets a rollout set up its weights once.
        """
        c = self.width
        maps = self.prepare() if maps is None else maps
        y = self._affine(maps, "RO", x)
        rest = x.shape[1:-1]
        own = y[..., :c].reshape((batch, m, 1) + rest + (c,))
        other = y[..., c:2 * c].reshape((batch, 1, m) + rest + (c,))
        self_term = nc.relu(y[..., 2 * c:])
        offdiag = (1.0 - np.eye(m, dtype=x.dtype)).reshape((1, m, m) + (1,) * (len(rest) + 1))
        pairs = nc.relu(own + other) * offdiag
        relational = pairs.sum(axis=2).reshape((batch * m,) + rest + (c,))
        effect = nc.relu(self._affine(maps, "A", self_term + relational))
        return nc.relu(self._affine(maps, "Z", nc.concat([x, effect], axis=-1)))

    def predict(self, zs_newest_first: Sequence[Tensor], maps: dict | None = None) -> Tensor:
        if len(zs_newest_first) != self.k:
            raise ValueError(f"f_P needs exactly k={self.k} history entries, got {len(zs_newest_first)}")
        maps = self.prepare() if maps is None else maps
        return nc.relu(self._affine(maps, "P", nc.concat(list(zs_newest_first), axis=-1)))

    def step(self, history: Sequence[Tensor]) -> Tensor:
        """History (oldest first) of [B, m, d, h, w] or [m, d, h, w] maps -> next maps."""
        if len(history) != self.k:
            raise ValueError(f"history length {len(history)} != k={self.k}")
        history = [h.features if isinstance(h, ObjectFeatureSet) else nc.as_tensor(h) for h in history]
        shapes = {h.shape for h in history}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent object sets across history: {sorted(shapes)}")
        shape = history[0].shape
        if len(shape) == 4:
            batch, m = 1, shape[0]
        elif len(shape) == 5:
            batch, m = shape[0], shape[1]
        else:
            raise ValueError(f"object features must be [m,d,h,w] or [B,m,d,h,w], got {shape}")
        if shape[-3:] != (self.d,) + self.spatial:
            raise ValueError(f"object features must be {(self.d,) + self.spatial} maps, got {shape[-3:]}")
        maps = self.prepare()
        zs = []
        for h in history:
            x = nc.transpose(h.reshape((batch * m,) + shape[-3:]), (0, 2, 3, 1))
            zs.append(self.interact(self.from_nhwc(x), batch, m, maps))
        out = nc.transpose(self.to_nhwc(self.predict(zs[::-1], maps)), (0, 3, 1, 2))
        return out.reshape(shape)


def cin_step(history: Sequence, net: InteractionNetwork) -> Tensor:
    """One step of the convolutional interaction network."""
    if net.kind != "cin":
        raise ValueError("cin_step needs a convolutional interaction network")
    return net.step(history)


def in_step(history: Sequence, net: InteractionNetwork) -> Tensor:
    """One step of the vector interaction network (features flattened on entry)."""
    if net.kind != "in":
        raise ValueError("in_step needs a vector interaction network")
    return net.step(history)
