"""Differentiable operators used by the light-field model."""
from __future__ import annotations

import itertools
import math

import numpy as np

from .tensor import Tensor, as_tensor


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ValueError(f"cannot broadcast shapes {a.shape} and {b.shape}") from exc


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor._make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._make(a.data * b.data, (a, b), backward)


def abs(x) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    # np.sign gives the subgradient 0 at 0.
    sign = np.sign(x.data)
    return Tensor._make(np.abs(x.data), (x,), lambda g: (g * sign,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._make(y, (x,), lambda g: (g * (1.0 - y * y),))


def sum(x, axis=None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._make(x.data.sum(axis=axis), (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = math.prod(x.shape[a] for a in axes)
    return mul(sum(x, axis), 1.0 / count)


# -- shape manipulation --------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    return Tensor._make(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return Tensor._make(out, (x,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros(x.shape)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return Tensor._make(np.array(x.data[index]), (x,), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def diff(x, axis: int) -> Tensor:
    """Forward difference ``x[i+1] - x[i]`` along ``axis``; the axis shrinks by one."""
    x = as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] < 2:
        raise ValueError(f"axis {axis} has extent {x.shape[axis]}; need at least 2")
    hi = [slice(None)] * x.ndim
    lo = [slice(None)] * x.ndim
    hi[axis] = slice(1, None)
    lo[axis] = slice(None, -1)
    hi, lo = tuple(hi), tuple(lo)

    def backward(g):
        full = np.zeros(x.shape)
        full[hi] += g
        full[lo] -= g
        return (full,)

    return Tensor._make(x.data[hi] - x.data[lo], (x,), backward)


def spatial_gradient(x) -> tuple[Tensor, Tensor]:
    """Forward differences over the last two axes ``(..., H, W)``.

    Returns ``(gx, gy)`` with shapes ``(..., H, W-1)`` and ``(..., H-1, W)``.
    """
    x = as_tensor(x)
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ValueError(f"spatial_gradient needs H, W >= 2, got shape {x.shape}")
    return diff(x, -1), diff(x, -2)


# -- convolution -----------------------------------------------------------------

def _as_tuple(v, nd: int) -> tuple[int, ...]:
    if isinstance(v, int):
        return (v,) * nd
    v = tuple(int(i) for i in v)
    if len(v) != nd:
        raise ValueError(f"expected {nd} values, got {v}")
    return v


def convnd(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    """N-d cross-correlation with zero padding.

    ``x`` is ``[B, Cin, *S]`` and ``weight`` is ``[Cout, Cin, *K]``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    nd = weight.ndim - 2
    if x.ndim != nd + 2:
        raise ValueError(f"input rank {x.ndim} does not match {nd}-d kernel of shape {weight.shape}")
    B, C = x.shape[:2]
    Co, Ci = weight.shape[:2]
    if Ci != C:
        raise ValueError(f"input has {C} channels but weight expects {Ci}")
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (Co,):
            raise ValueError(f"bias shape {bias.shape} != ({Co},)")
    stride = _as_tuple(stride, nd)
    padding = _as_tuple(padding, nd)
    dilation = _as_tuple(dilation, nd)
    if min(stride) < 1 or min(dilation) < 1 or min(padding) < 0:
        raise ValueError("stride and dilation must be >= 1, padding >= 0")
    K = weight.shape[2:]
    S = x.shape[2:]
    O = tuple((S[i] + 2 * padding[i] - dilation[i] * (K[i] - 1) - 1) // stride[i] + 1 for i in range(nd))
    if min(O) < 1:
        raise ValueError(f"kernel {K} (dilation {dilation}) larger than padded input {S}")

    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    xpt = xp.transpose((1, 0) + tuple(range(2, nd + 2)))  # [C, B, *Sp]
    nk = math.prod(K)
    offsets = list(itertools.product(*[range(k) for k in K]))
    windows = [
        (slice(None), slice(None))
        + tuple(slice(o * dilation[i], o * dilation[i] + stride[i] * (O[i] - 1) + 1, stride[i]) for i, o in enumerate(off))
        for off in offsets
    ]
    cols = np.empty((C, nk, B) + O)
    for ki, win in enumerate(windows):
        cols[:, ki] = xpt[win]
    cols2 = cols.reshape(C * nk, -1)
    w2 = weight.data.reshape(Co, -1)
    out = (w2 @ cols2).reshape((Co, B) + O)
    perm = (1, 0) + tuple(range(2, nd + 2))
    out = np.ascontiguousarray(out.transpose(perm))
    if bias is not None:
        out += bias.data.reshape((1, Co) + (1,) * nd)

    def backward(g):
        g2 = np.ascontiguousarray(g.transpose(perm)).reshape(Co, -1)
        gw = (g2 @ cols2.T).reshape(weight.shape) if weight.requires_grad else None
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, nd + 2)))
        gx = None
        if x.requires_grad:
            gcols = (w2.T @ g2).reshape((C, nk, B) + O)
            gxp = np.zeros(xpt.shape)
            for ki, win in enumerate(windows):
                gxp[win] += gcols[:, ki]
            inner = (slice(None), slice(None)) + tuple(slice(p, p + s) for p, s in zip(padding, S))
            gx = np.ascontiguousarray(gxp[inner].transpose(perm))
        return (gx, gw, gb) if bias is not None else (gx, gw)

    parents = (x, weight, bias) if bias is not None else (x, weight)
    return Tensor._make(out, parents, backward)


def conv2d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    if as_tensor(weight).ndim != 4:
        raise ValueError("conv2d expects a [Cout, Cin, kh, kw] weight")
    return convnd(x, weight, bias, stride, padding, dilation)


def conv3d(x, weight, bias=None, stride=1, padding=0, dilation=1) -> Tensor:
    if as_tensor(weight).ndim != 5:
        raise ValueError("conv3d expects a [Cout, Cin, kd, kh, kw] weight")
    return convnd(x, weight, bias, stride, padding, dilation)


# -- view reshaping for spatial/angular alternation -------------------------------

def reshape_views(x, mode: str, batch: int, grid: tuple[int, int], spatial: tuple[int, int]) -> Tensor:
    """Permute between ``spatial`` layout ``[B*M*N, C, H, W]`` and ``angular``
    layout ``[B*H*W, C, M, N]``. ``mode`` names the target layout."""
    x = as_tensor(x)
    M, N = grid
    H, W = spatial
    if mode == "angular":
        if x.ndim != 4 or x.shape[0] != batch * M * N or x.shape[2:] != (H, W):
            raise ValueError(f"expected [{batch * M * N}, C, {H}, {W}], got {x.shape}")
        C = x.shape[1]
        y = reshape(x, (batch, M, N, C, H, W))
        y = transpose(y, (0, 4, 5, 3, 1, 2))
        return reshape(y, (batch * H * W, C, M, N))
    if mode == "spatial":
        if x.ndim != 4 or x.shape[0] != batch * H * W or x.shape[2:] != (M, N):
            raise ValueError(f"expected [{batch * H * W}, C, {M}, {N}], got {x.shape}")
        C = x.shape[1]
        y = reshape(x, (batch, H, W, C, M, N))
        y = transpose(y, (0, 4, 5, 3, 1, 2))
        return reshape(y, (batch * M * N, C, H, W))
    raise ValueError(f"unknown mode {mode!r}; use 'spatial' or 'angular'")


# -- bilinear sampling ---------------------------------------------------------------

def bilinear_sample(image, coords) -> Tensor:
    """Sample ``image`` at pixel coordinates with bilinear interpolation.

    ``image`` is ``[C, H, W]`` or ``[B, C, H, W]``; ``coords`` is ``[Ho, Wo, 2]``
    or ``[B, Ho, Wo, 2]`` holding ``(x, y)`` pairs. Coordinates are clamped to
    the image border, so the coordinate gradient is zero outside the image.
    """
    image, coords = as_tensor(image), as_tensor(coords)
    batched = image.ndim == 4
    img = image.data if batched else image.data[None]
    crd = coords.data if batched else coords.data[None]
    if crd.ndim != 4 or crd.shape[-1] != 2 or crd.shape[0] != img.shape[0]:
        raise ValueError(f"coords shape {coords.shape} incompatible with image {image.shape}")
    if not np.all(np.isfinite(crd)):
        raise ValueError("coordinates must be finite")
    B, C, H, W = img.shape
    Ho, Wo = crd.shape[1:3]

    def axis_setup(v, n):
        vc = np.clip(v, 0.0, n - 1.0)
        if n == 1:
            i0 = np.zeros(v.shape, dtype=np.intp)
            return i0, i0, np.zeros(v.shape), np.zeros(v.shape, dtype=bool)
        i0 = np.minimum(np.floor(vc).astype(np.intp), n - 2)
        inside = (v > 0.0) & (v < n - 1.0)
        return i0, i0 + 1, vc - i0, inside

    x0, x1, wx, inx = axis_setup(crd[..., 0], W)
    y0, y1, wy, iny = axis_setup(crd[..., 1], H)

    flat = img.reshape(B, C, H * W)
    base = (np.arange(B) * H * W)[:, None, None]
    ia = (base + y0 * W + x0).reshape(B, 1, -1)
    ib = (base + y0 * W + x1).reshape(B, 1, -1)
    ic = (base + y1 * W + x0).reshape(B, 1, -1)
    idd = (base + y1 * W + x1).reshape(B, 1, -1)
    pix = flat.transpose(1, 0, 2).reshape(C, B * H * W)

    def gather(idx):
        return pix[:, idx.reshape(-1)].reshape(C, B, Ho, Wo).transpose(1, 0, 2, 3)

    Ia, Ib, Ic, Id = gather(ia), gather(ib), gather(ic), gather(idd)
    wa = ((1 - wx) * (1 - wy))[:, None]
    wb = (wx * (1 - wy))[:, None]
    wc = ((1 - wx) * wy)[:, None]
    wd = (wx * wy)[:, None]
    out = Ia * wa + Ib * wb + Ic * wc + Id * wd
    if not batched:
        out = out[0]

    def backward(g):
        gb = g if batched else g[None]
        gimg = None
        if image.requires_grad:
            idx = np.concatenate([ia, ib, ic, idd], axis=-1)[:, 0]  # [B, 4*Ho*Wo]
            weights = np.concatenate(
                [np.broadcast_to(w, (B, C, Ho, Wo)).reshape(B, C, -1) * gb.reshape(B, C, -1)
                 for w in (wa, wb, wc, wd)], axis=-1)  # [B, C, 4*Ho*Wo]
            chan = (np.arange(C) * B * H * W)[None, :, None]
            full_idx = chan + idx[:, None, :]
            acc = np.bincount(full_idx.reshape(-1), weights=weights.reshape(-1), minlength=C * B * H * W)
            gimg = acc.reshape(C, B, H, W).transpose(1, 0, 2, 3)
            if not batched:
                gimg = gimg[0]
            gimg = np.ascontiguousarray(gimg)
        gcrd = None
        if coords.requires_grad:
            dx = (Ib - Ia) * (1 - wy)[:, None] + (Id - Ic) * wy[:, None]
            dy = (Ic - Ia) * (1 - wx)[:, None] + (Id - Ib) * wx[:, None]
            gx = (gb * dx).sum(axis=1) * inx
            gy = (gb * dy).sum(axis=1) * iny
            gcrd = np.stack([gx, gy], axis=-1)
            if not batched:
                gcrd = gcrd[0]
        return gimg, gcrd

    return Tensor._make(out, (image, coords), backward)
