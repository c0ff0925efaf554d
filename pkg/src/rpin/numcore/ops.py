"""Differentiable operations.

Image tensors are NCHW (or CHW for a single image). Convolutions run
internally on channels-last im2col rows so each conv is a single BLAS matmul;
results are handed back in NCHW.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import DeferredGrad, Tensor, as_tensor

_make = Tensor._make

# set to a list by grad_check; relu masks and maxpool winners are appended so
# finite-difference probes that cross a kink can be recognised
_kink_trace: list | None = None


def _coerce(a, like: Tensor | None = None) -> Tensor:
    """Tensor-ify an operand; bare python/numpy scalars take the dtype of ``like``."""
    if isinstance(a, Tensor):
        return a
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(a, dtype=dtype) if dtype is not None else a)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _make(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a = _coerce(a, b if isinstance(b, Tensor) else None)
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if b.requires_grad else None)

    return _make(ad / bd, (a, b), backward)


def power(x: Tensor, exponent: float) -> Tensor:
    xd = x.data
    return _make(xd ** exponent, (x,), lambda g: (g * exponent * xd ** (exponent - 1),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    mask = x.data > 0
    if _kink_trace is not None:
        _kink_trace.append(mask)
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    shape, dtype = x.shape, x.dtype
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(x.data[index], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.split(g, splits, axis=axis)))


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    """Stack [C_i,H,W] (or [B,C_i,H,W]) maps along the channel axis."""
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or x.shape[-2:] != ref[-2:] or x.shape[:-3] != ref[:-3]:
            raise ValueError(f"concat_channels: spatial/batch shape mismatch {ref} vs {x.shape}")
    return concat(xs, axis=-3)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    n = len(xs)
    return _make(np.stack([x.data for x in xs], axis=axis), xs,
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if bd.ndim > 1 \
                else np.multiply.outer(g, bd)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return _make(ad @ bd, (a, b), backward)


# ---------------------------------------------------------------- layers

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           weight_t: np.ndarray | None = None) -> Tensor:
    """Affine map over the last axis: x @ W^T + b with W of shape [D_out, D_in].

    ``weight_t`` may hold a contiguous copy of W^T; a caller reusing one
    weight for many small batches (a rollout) passes it to speed up the
    input gradient.
    """
    x = as_tensor(x)
    wd = weight.data
    if x.shape[-1] != wd.shape[1]:
        raise ValueError(f"linear: input has {x.shape[-1]} features, weight expects {wd.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, wd.shape[1])
    # few rows: BLAS streams a large weight faster as the left operand
    out = (wd @ x2.T).T if len(x2) < 128 else x2 @ wd.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = None
        if x.requires_grad:
            gx = (weight_t @ g2.T).T if weight_t is not None else g2 @ wd
            gx = gx.reshape(lead + (wd.shape[1],))
        gw = DeferredGrad(g2, x2) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out.reshape(lead + (wd.shape[0],)), parents, backward)


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """im2col of a padded NHWC buffer: [B*ho*wo, kh*kw*C] rows ordered (i, j, c)."""
    B, _, _, C = xp.shape
    sb, sy, sx, sc = xp.strides
    view = as_strided(xp, (B, ho, wo, kh, kw * C), (sb, sy * stride, sx * stride, sy, sc), writeable=False)
    return np.ascontiguousarray(view).reshape(B * ho * wo, kh * kw * C)


def _pad(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    """Zero-pad the two spatial axes of an NHWC array."""
    if ph == pw == 0:
        return np.ascontiguousarray(x)  # _windows relies on a packed (W, C) row
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, C), dtype=x.dtype)
    xp[:, ph:ph + H, pw:pw + W, :] = x
    return xp


def _check_layout(layout: str) -> bool:
    if layout not in ("nchw", "nhwc"):
        raise ValueError(f"layout must be 'nchw' or 'nhwc', got {layout!r}")
    return layout == "nchw"


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0, layout: str = "nchw") -> Tensor:
    """2-D cross-correlation with zero padding.

    Input is [C,H,W] / [B,C,H,W] (``layout='nchw'``) or [H,W,C] / [B,H,W,C]
    (``'nhwc'``); the weight is always [C_out,C_in,kH,kW]. Computed as one
    matmul over channels-last im2col rows. The input gradient of a stride-1
    conv is itself a conv of the output gradient with the flipped kernel,
    which avoids a scatter over overlapping windows.
    """
    x = as_tensor(x)
    nchw = _check_layout(layout)
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects a 3-D or 4-D input, got shape {x.shape}")
    wd = weight.data
    if wd.ndim != 4:
        raise ValueError(f"conv2d weight must be [C_out,C_in,kH,kW], got {wd.shape}")
    if nchw:
        xd = xd.transpose(0, 2, 3, 1)
    B, H, W, C = xd.shape
    O, Cw, kh, kw = wd.shape
    if Cw != C:
        raise ValueError(f"conv2d: input has {C} channels but weight expects {Cw} (weight shape {wd.shape})")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: invalid stride={stride} / padding={padding}")
    ho = (H + 2 * padding - kh) // stride + 1
    wo = (W + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {H}x{W} too small for kernel {kh}x{kw}")

    dtype = xd.dtype
    wt = np.ascontiguousarray(wd.transpose(2, 3, 1, 0), dtype=dtype).reshape(kh * kw * C, O)
    if kh == kw == 1 and padding == 0:
        cols = np.ascontiguousarray(xd[:, ::stride, ::stride, :]).reshape(-1, C)
    else:
        cols = _windows(_pad(xd, padding, padding), kh, kw, stride, ho, wo)
    out = cols @ wt
    if bias is not None:
        out += bias.data
    result = out.reshape(B, ho, wo, O)
    if nchw:
        result = np.ascontiguousarray(result.transpose(0, 3, 1, 2))
    if single:
        result = result[0]
    if not weight.requires_grad:
        cols = None

    def backward(g):
        g = g[None] if single else g
        if nchw:
            g = g.transpose(0, 2, 3, 1)
        go = np.ascontiguousarray(g).reshape(-1, O)
        gx = gw = gb = None
        if weight.requires_grad:
            gw = np.ascontiguousarray((cols.T @ go).reshape(kh, kw, C, O).transpose(3, 2, 0, 1))
        if x.requires_grad:
            gx = _conv2d_input_grad(go.reshape(B, ho, wo, O), wd, (H, W), stride, padding)
            if nchw:
                gx = np.ascontiguousarray(gx.transpose(0, 3, 1, 2))
            if single:
                gx = gx[0]
        if bias is not None and bias.requires_grad:
            gb = go.sum(axis=0)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(result, parents, backward)


def _conv2d_input_grad(go: np.ndarray, wd: np.ndarray, size: tuple[int, int],
                       stride: int, padding: int) -> np.ndarray:
    """NHWC input gradient from the NHWC output gradient."""
    B, ho, wo, O = go.shape
    _, C, kh, kw = wd.shape
    H, W = size
    if kh == kw == 1 and padding == 0:
        gi = go.reshape(-1, O) @ np.ascontiguousarray(wd[:, :, 0, 0])
        if stride == 1:
            return gi.reshape(B, H, W, C)
        gx = np.zeros((B, H, W, C), dtype=go.dtype)
        gx[:, ::stride, ::stride, :] = gi.reshape(B, ho, wo, C)
        return gx
    if stride == 1 and padding <= min(kh, kw) - 1:
        # full correlation of the output gradient with the flipped kernel
        gp = _pad(go, kh - 1 - padding, kw - 1 - padding)
        wf = np.ascontiguousarray(wd[:, :, ::-1, ::-1].transpose(2, 3, 0, 1)).reshape(kh * kw * O, C)
        return (_windows(gp, kh, kw, 1, H, W) @ wf).reshape(B, H, W, C)
    wt = np.ascontiguousarray(wd.transpose(2, 3, 1, 0)).reshape(kh * kw * C, O)
    gcols = (go.reshape(-1, O) @ wt.T).reshape(B, ho, wo, kh, kw, C)
    gxp = np.zeros((B, H + 2 * padding, W + 2 * padding, C), dtype=go.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] += gcols[:, :, :, i, j]
    return gxp[:, padding:padding + H, padding:padding + W, :]


def maxpool2(x: Tensor, layout: str = "nchw") -> Tensor:
    """2x2 stride-2 max pooling; gradient goes to the first maximum in row-major order."""
    x = as_tensor(x)
    nchw = _check_layout(layout)
    if nchw:
        *lead, H, W = x.shape
        tail = ()
    else:
        *lead, H, W, Cc = x.shape
        tail = (Cc,)
    if H % 2 or W % 2:
        raise ValueError(f"maxpool2 needs even spatial size, got {H}x{W}")
    lead = tuple(lead)
    nl = len(lead)
    win = x.data.reshape(lead + (H // 2, 2, W // 2, 2) + tail)
    # window axes to the end: (..., H/2, W/2, [C], 2, 2)
    perm = tuple(range(nl)) + (nl, nl + 2) + tuple(nl + 4 + i for i in range(len(tail))) + (nl + 1, nl + 3)
    inv = tuple(np.argsort(perm))
    pooled_shape = lead + (H // 2, W // 2) + tail
    win = win.transpose(perm).reshape(pooled_shape + (4,))
    idx = win.argmax(axis=-1)[..., None]
    if _kink_trace is not None:
        _kink_trace.append(idx)
    out = np.take_along_axis(win, idx, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(pooled_shape + (4,), dtype=g.dtype)
        np.put_along_axis(gw, idx, g[..., None], axis=-1)
        gw = gw.reshape(pooled_shape + (2, 2)).transpose(inv)
        return (gw.reshape(x.shape),)

    return _make(out, (x,), backward)


def upsample_nearest2(x: Tensor, layout: str = "nchw") -> Tensor:
    """Replicate each value into a 2x2 block."""
    x = as_tensor(x)
    if _check_layout(layout):
        *lead, H, W = x.shape
        lead = tuple(lead)
        out = np.broadcast_to(x.data[..., :, None, :, None], lead + (H, 2, W, 2)).reshape(lead + (2 * H, 2 * W))

        def backward(g):
            return (g.reshape(lead + (H, 2, W, 2)).sum(axis=(-3, -1)),)
    else:
        *lead, H, W, C = x.shape
        lead = tuple(lead)
        out = np.broadcast_to(x.data[..., :, None, :, None, :], lead + (H, 2, W, 2, C)) \
            .reshape(lead + (2 * H, 2 * W, C))

        def backward(g):
            return (g.reshape(lead + (H, 2, W, 2, C)).sum(axis=(-4, -2)),)

    return _make(out, (x,), backward)


def _channel_sum(a: np.ndarray, axes: tuple[int, ...], nchw: bool) -> np.ndarray:
    if nchw:
        return a.sum(axis=axes)
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(len(a2), dtype=a.dtype) @ a2  # BLAS column sums


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5, layout: str = "nchw") -> Tensor:
    """Per-channel batch normalization of [B,C,H,W] (or [B,H,W,C]) input.

    In training mode the batch statistics are used and the running buffers are
    updated in place (unbiased variance, like most frameworks); in eval mode
    the running buffers are used.
    """
    x = as_tensor(x)
    nchw = _check_layout(layout)
    if x.ndim != 4:
        raise ValueError(f"batchnorm2d expects a 4-D input, got {x.shape}")
    if nchw:
        B, C, H, W = x.shape
        axes, shp = (0, 2, 3), (1, C, 1, 1)
    else:
        B, H, W, C = x.shape
        axes, shp = (0, 1, 2), (C,)
    xd = x.data if nchw else np.ascontiguousarray(x.data)
    n = B * H * W
    gd = gamma.data.reshape(shp)
    if training:
        if n < 2:
            raise ValueError(f"batchnorm2d in train mode needs B*H*W >= 2, got {n}")
        mu = _channel_sum(xd, axes, nchw) / n
        xc = xd - mu.reshape(shp)
        var = _channel_sum(xc * xc, axes, nchw) / n
        inv_std = (1.0 / np.sqrt(var + eps)).reshape(shp)
        xhat = xc
        xhat *= inv_std
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (n / (n - 1))
    else:
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(shp).astype(x.dtype)
        xhat = (xd - running_mean.reshape(shp).astype(x.dtype)) * inv_std
    out = xhat * gd
    out += beta.data.reshape(shp)

    def backward(g):
        need_gg = gamma.requires_grad or (training and x.requires_grad)
        sg = _channel_sum(g, axes, nchw) if (beta.requires_grad or training) else None
        sgx = _channel_sum(g * xhat, axes, nchw) if need_gg else None
        gx = None
        if x.requires_grad:
            if training:
                # inv_std * gamma * (g - mean(g) - xhat * mean(g * xhat))
                gx = g - (sg / n).reshape(shp)
                gx -= xhat * (sgx / n).reshape(shp)
                gx *= inv_std * gd
            else:
                gx = g * (inv_std * gd)
        return gx, sgx if gamma.requires_grad else None, sg if beta.requires_grad else None

    return _make(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------- sampling

def sample_bilinear(features: Tensor, batch_index: np.ndarray, points: np.ndarray,
                    layout: str = "nchw") -> Tensor:
    """Bilinear reads from a batch of maps.

    features: [B,C,H,W] (or [B,H,W,C]); batch_index: [R] ints; points:
    [R,P,2] as (x, y) in cell units where integer (i, j) is the value stored
    at row j, column i. Points outside the map are clamped to the border.
    Returns [R,C,P] (or [R,P,C]); differentiable with respect to ``features``
    only.
    """
    features = as_tensor(features)
    nchw = _check_layout(layout)
    if nchw:
        B, C, H, W = features.shape
        f = features.data.transpose(0, 2, 3, 1)
    else:
        B, H, W, C = features.shape
        f = features.data
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("sample_bilinear: sampling points must be finite")
    bi = np.asarray(batch_index, dtype=np.intp)[:, None]
    px = np.clip(pts[..., 0], 0.0, W - 1)
    py = np.clip(pts[..., 1], 0.0, H - 1)
    x0 = np.floor(px).astype(np.intp)
    y0 = np.floor(py).astype(np.intp)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    dtype = features.dtype
    wx = (px - x0).astype(dtype)[..., None]
    wy = (py - y0).astype(dtype)[..., None]
    corners = (
        (y0, x0, (1 - wx) * (1 - wy)),
        (y0, x1, wx * (1 - wy)),
        (y1, x0, (1 - wx) * wy),
        (y1, x1, wx * wy),
    )
    out = np.zeros(pts.shape[:2] + (C,), dtype=dtype)
    for yy, xx, w in corners:
        out += w * f[bi, yy, xx]

    def backward(g):
        gr = g.transpose(0, 2, 1) if nchw else g  # R,P,C
        gf = np.zeros((B, H, W, C), dtype=dtype)
        bb = np.broadcast_to(bi, x0.shape)
        for yy, xx, w in corners:
            np.add.at(gf, (bb, yy, xx), w * gr)
        return (np.ascontiguousarray(gf.transpose(0, 3, 1, 2)) if nchw else gf,)

    if nchw:
        out = np.ascontiguousarray(out.transpose(0, 2, 1))
    return _make(out, (features,), backward)


def bilinear_sample(feature: Tensor, points) -> Tensor:
    """Sample a single [C,H,W] map at a list of (x, y) points -> [C, len(points)]."""
    feature = as_tensor(feature)
    pts = np.asarray(points, dtype=np.float64).reshape(1, -1, 2)
    out = sample_bilinear(reshape(feature, (1,) + feature.shape), np.zeros(1, dtype=np.intp), pts)
    return reshape(out, (feature.shape[0], pts.shape[1]))


# ---------------------------------------------------------------- losses

def mse(pred: Tensor, target) -> Tensor:
    """Sum of squared differences."""
    pred = as_tensor(pred)
    target = _coerce(target, pred)
    if pred.shape != target.shape:
        raise ValueError(f"mse: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred.data - target.data

    def backward(g):
        d = 2.0 * g * diff
        return d, -d

    return _make(np.asarray((diff * diff).sum()), (pred, target), backward)


def softmax_xent_2d(logits: Tensor, target) -> Tensor:
    """Cross-entropy between a spatial softmax and a binary mask normalized to sum 1.

    Leading dimensions are treated as independent masks and their losses summed.
    """
    logits = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise ValueError(f"softmax_xent_2d: shape mismatch {logits.shape} vs {t.shape}")
    lead = logits.shape[:-2]
    z = logits.data.reshape(lead + (-1,))
    tt = t.reshape(lead + (-1,))
    mass = tt.sum(axis=-1, keepdims=True)
    if np.any(mass <= 0):
        raise ValueError("softmax_xent_2d: mask target has no positive cell; normalization undefined")
    q = tt / mass
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    logp = z - lse
    loss = -(q * logp).sum()

    def backward(g):
        return (g * (np.exp(logp) - q)).reshape(logits.shape),

    return _make(np.asarray(loss, dtype=logits.dtype), (logits,), backward)
