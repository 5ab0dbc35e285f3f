"""Backward warping of input views into every target view, and EPI shearing."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .core import DepthField, Epi, SparseLightField


@dataclass
class WarpStack:
    """Every target view warped from every source.

    ``values`` has shape ``(K, M, N, H, W, C)``: source ``k`` warped to target
    ``(u, v)``. It is a :class:`Tensor` so gradients reach the depth that
    produced it.
    """

    values: Tensor
    source_positions: list

    @property
    def array(self) -> np.ndarray:
        return self.values.data

    @property
    def grid_size(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]

    def from_source(self, k: int) -> np.ndarray:
        return self.values.data[k]


def pair_offsets(sources, grid) -> tuple[np.ndarray, np.ndarray]:
    """Angular offsets ``u - u'`` and ``v - v'`` for all (source, target)
    pairs, flattened source-major to shape ``(K*M*N,)``."""
    M, N = grid
    su = np.array([p[0] for p in sources], dtype=np.float64)
    sv = np.array([p[1] for p in sources], dtype=np.float64)
    tu, tv = np.meshgrid(np.arange(M, dtype=np.float64), np.arange(N, dtype=np.float64), indexing="ij")
    du = tu.reshape(1, -1) - su[:, None]
    dv = tv.reshape(1, -1) - sv[:, None]
    return du.reshape(-1), dv.reshape(-1)


def warp_tensor(sources: Tensor, positions, depth: Tensor) -> Tensor:
    """Differentiable core of :func:`backward_warp_all`.

    ``sources`` is ``(K, H, W, C)``, ``depth`` is ``(M, N, H, W)``; returns
    ``(K, M, N, H, W, C)``. Target ``(u, v)`` samples source ``k`` at
    ``x + D(x, u) * (u - u'_k)``, ``y + D(x, u) * (v - v'_k)``.
    """
    sources, depth = ad.as_tensor(sources), ad.as_tensor(depth)
    K, H, W, C = sources.shape
    M, N = depth.shape[:2]
    if depth.shape[2:] != (H, W):
        raise ValueError(f"depth spatial size {depth.shape[2:]} != source size {(H, W)}")
    if len(positions) != K:
        raise ValueError(f"{K} source views but {len(positions)} positions")
    for u, v in positions:
        if not (0 <= u < M and 0 <= v < N):
            raise ValueError(f"source position {(u, v)} outside the {M}x{N} target grid")
    T = M * N
    du, dv = pair_offsets(positions, (M, N))
    t_idx = np.tile(np.arange(T), K)
    k_idx = np.repeat(np.arange(K), T)
    d_flat = ad.reshape(depth, (T, H, W))
    d_pairs = ad.getitem(d_flat, t_idx)  # [K*T, H, W]
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    cx = ad.add(ad.mul(d_pairs, du[:, None, None]), xx)
    cy = ad.add(ad.mul(d_pairs, dv[:, None, None]), yy)
    coords = ad.stack([cx, cy], axis=-1)  # [K*T, H, W, 2]
    imgs = ad.transpose(sources, (0, 3, 1, 2))  # [K, C, H, W]
    imgs = ad.getitem(imgs, k_idx)  # [K*T, C, H, W]
    out = ad.bilinear_sample(imgs, coords)
    out = ad.reshape(out, (K, M, N, C, H, W))
    return ad.transpose(out, (0, 1, 2, 4, 5, 3))


def backward_warp_all(sparse: SparseLightField, depth) -> WarpStack:
    """Warp each input view to each target view of the grid.

    ``depth`` is a :class:`DepthField` or a ``(M, N, H, W)`` tensor; pass a
    tensor that requires grad to differentiate through the warp.
    """
    d = depth.disparity if isinstance(depth, DepthField) else depth
    d = ad.as_tensor(d)
    if tuple(d.shape[:2]) != tuple(sparse.grid_size):
        raise ValueError(f"depth grid {d.shape[:2]} does not match light-field grid {sparse.grid_size}")
    return WarpStack(warp_tensor(Tensor(sparse.views), sparse.positions, d), list(sparse.positions))


def shear_epi(epi: Epi, d: float, center: float | None = None) -> Epi:
    """Resample angular row ``a`` at ``s + d * (center - a)``, i.e. warp every
    row onto the center row (linear interpolation, edge clamped). With the
    true disparity of a fronto-parallel scene the EPI lines become vertical."""
    plane = np.asarray(epi.plane, dtype=np.float64)
    A, S = plane.shape
    c = (A - 1) / 2.0 if center is None else center
    s = np.arange(S, dtype=np.float64)
    out = np.empty_like(plane)
    for a in range(A):
        out[a] = np.interp(s + d * (c - a), s, plane[a])
    return Epi(out, epi.orientation, epi.fixed_coords, epi.channel)
