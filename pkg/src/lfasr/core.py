"""Light-field containers, angular indexing and EPI slicing.

Arrays use axis order ``(u, v, y, x, c)``. The angular index ``u`` (axis 0)
pairs with the spatial column ``x`` and ``v`` pairs with the row ``y``.
Disparity follows the warp convention: view ``u`` at ``x`` matches view
``u'`` at ``x + d * (u - u')``, so a point seen at ``x`` in view ``u``
appears at ``x - d`` in view ``u + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_DISPARITY_BOUND = 21.5


class InvalidGridError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LightField:
    """Dense view grid of radiance samples in ``[0, 1]``, shape ``(M, N, H, W, C)``."""

    views: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.views, dtype=np.float64)
        if v.ndim == 4:
            v = v[..., None]
        if v.ndim != 5:
            raise ValueError(f"light field must be 5-d (u, v, y, x, c), got shape {v.shape}")
        if min(v.shape[:4]) < 1 or v.shape[4] not in (1, 3):
            raise ValueError(f"invalid light-field shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("light field contains non-finite samples")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("light field samples must lie in [0, 1]")
        object.__setattr__(self, "views", _frozen(v))

    @property
    def angular_size(self) -> tuple[int, int]:
        return self.views.shape[0], self.views.shape[1]

    @property
    def spatial_size(self) -> tuple[int, int]:
        return self.views.shape[2], self.views.shape[3]

    @property
    def channels(self) -> int:
        return self.views.shape[4]

    def view(self, u: int, v: int) -> np.ndarray:
        return self.views[u, v]

    def sparse(self, positions) -> "SparseLightField":
        positions = [tuple(int(i) for i in p) for p in positions]
        return SparseLightField(np.stack([self.views[p] for p in positions]), positions, self.angular_size)

    def crop(self, y0: int, x0: int, h: int, w: int) -> "LightField":
        return LightField(self.views[:, :, y0 : y0 + h, x0 : x0 + w])


@dataclass(frozen=True)
class SparseLightField:
    """``K`` input views ``(K, H, W, C)`` at known positions of an ``M x N`` grid."""

    views: np.ndarray
    positions: list
    grid_size: tuple[int, int]

    def __post_init__(self):
        v = np.asarray(self.views, dtype=np.float64)
        if v.ndim == 3:
            v = v[..., None]
        if v.ndim != 4:
            raise ValueError(f"sparse views must be (K, H, W, C), got {v.shape}")
        pos = [tuple(int(i) for i in p) for p in self.positions]
        M, N = (int(g) for g in self.grid_size)
        if len(pos) != v.shape[0]:
            raise ValueError(f"{v.shape[0]} views but {len(pos)} positions")
        if len(set(pos)) != len(pos):
            raise ValueError(f"positions must be distinct: {pos}")
        for u, vv in pos:
            if not (0 <= u < M and 0 <= vv < N):
                raise ValueError(f"position {(u, vv)} outside the {M}x{N} grid")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise ValueError("sparse views must be finite and within [0, 1]")
        object.__setattr__(self, "views", _frozen(v))
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "grid_size", (M, N))

    @property
    def spatial_size(self) -> tuple[int, int]:
        return self.views.shape[1], self.views.shape[2]

    @property
    def channels(self) -> int:
        return self.views.shape[3]


@dataclass(frozen=True)
class DepthField:
    """Per-view disparity ``(M, N, H, W)`` in pixels per angular step."""

    disparity: np.ndarray
    bound: float = DEFAULT_DISPARITY_BOUND

    def __post_init__(self):
        d = np.asarray(self.disparity, dtype=np.float64)
        if d.ndim != 4:
            raise ValueError(f"depth field must be (u, v, y, x), got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValueError("depth field contains non-finite values")
        if np.abs(d).max(initial=0.0) > self.bound:
            raise ValueError(f"disparity exceeds bound {self.bound}")
        object.__setattr__(self, "disparity", _frozen(d))

    @property
    def angular_size(self) -> tuple[int, int]:
        return self.disparity.shape[0], self.disparity.shape[1]


@dataclass(frozen=True)
class Epi:
    """2-d slice with one angular and one spatial axis.

    ``horizontal``: ``plane[u, x]`` at fixed ``(y, v)``; ``vertical``:
    ``plane[v, y]`` at fixed ``(x, u)``.
    """

    plane: np.ndarray
    orientation: str
    fixed_coords: tuple[int, int]
    channel: int = 0


def extract_epi(lf: LightField, orientation: str, fixed_coords, channel: int = 0) -> Epi:
    """Exact EPI slice. ``fixed_coords`` is ``(y, v)`` for horizontal and
    ``(x, u)`` for vertical EPIs."""
    M, N = lf.angular_size
    H, W = lf.spatial_size
    a, b = (int(c) for c in fixed_coords)
    if not 0 <= channel < lf.channels:
        raise IndexError(f"channel {channel} out of range for {lf.channels} channels")
    if orientation == "horizontal":
        if not (0 <= a < H and 0 <= b < N):
            raise IndexError(f"(y, v)=({a}, {b}) outside spatial height {H} / angular width {N}")
        plane = lf.views[:, b, a, :, channel]
    elif orientation == "vertical":
        if not (0 <= a < W and 0 <= b < M):
            raise IndexError(f"(x, u)=({a}, {b}) outside spatial width {W} / angular height {M}")
        plane = lf.views[b, :, :, a, channel]
    else:
        raise ValueError(f"orientation must be 'horizontal' or 'vertical', got {orientation!r}")
    return Epi(np.array(plane), orientation, (a, b), channel)


def insert_epi(views: np.ndarray, epi: Epi) -> None:
    """Write ``epi`` back into a mutable ``(M, N, H, W, C)`` array in place."""
    a, b = epi.fixed_coords
    if epi.orientation == "horizontal":
        views[:, b, a, :, epi.channel] = epi.plane
    else:
        views[b, :, :, a, epi.channel] = epi.plane


def corner_positions(M: int, N: int) -> list[tuple[int, int]]:
    """Grid corners in the order top-left, (0, N-1), (M-1, 0), bottom-right.

    The first entry is the view the blending residual is added to.
    """
    if M < 2 or N < 2:
        raise InvalidGridError(f"corner sampling needs a grid of at least 2x2, got {M}x{N}")
    return [(0, 0), (0, N - 1), (M - 1, 0), (M - 1, N - 1)]


def parallax_lookup(lf: LightField, x, u, d: float, delta_u) -> np.ndarray:
    """Radiance at ``(x - d*du, u + du)`` by bilinear sampling with border
    clamping, one value per channel.

    The sign follows the warp convention: a point at ``x`` in view ``u`` with
    disparity ``d`` sits at ``x - d*du`` in view ``u + du``.

    ``x`` is a spatial ``(x, y)`` pair, ``u`` and ``delta_u`` are angular
    ``(u, v)`` pairs.
    """
    from .autodiff import bilinear_sample

    M, N = lf.angular_size
    (px, py), (u0, v0), (du, dv) = x, u, delta_u
    tu, tv = u0 + du, v0 + dv
    if not (0 <= u0 < M and 0 <= v0 < N and 0 <= tu < M and 0 <= tv < N):
        raise IndexError(f"angular positions {(u0, v0)} -> {(tu, tv)} outside {M}x{N} grid")
    img = np.moveaxis(lf.views[tu, tv], -1, 0)
    coords = np.array([[[px - d * du, py - d * dv]]], dtype=np.float64)
    return bilinear_sample(img, coords).data[:, 0, 0]


def to_luminance(a: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of a channel-last array; single-channel input passes through."""
    if a.shape[-1] == 1:
        return a
    return (a[..., 0:1] * 0.299 + a[..., 1:2] * 0.587 + a[..., 2:3] * 0.114)
