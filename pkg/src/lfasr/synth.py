"""Layered synthetic light fields with analytic ground truth.

Each layer is a fronto-parallel plane with a procedural texture and an alpha
mask. View ``(u, v)`` samples layer ``k`` at ``x + d_k * (u - u_c)``,
``y + d_k * (v - v_c)`` where ``(u_c, v_c)`` is the grid center, which is
the sign under which the backward warp with the true disparity is exact. Layers are composited in list order, so later layers occlude earlier
ones.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import DEFAULT_DISPARITY_BOUND, DepthField, LightField, corner_positions

TEXTURES = ("ramp", "checker", "sinusoid", "noise")
MASKS = ("full", "holes", "object")


@dataclass
class Texture:
    """Procedural texture. ``params`` depends on ``kind``:

    - ramp: ``corners`` [c00, c10, c01, c11] over ``extent`` [x0, y0, x1, y1]
      (globally bilinear, so bilinear resampling reproduces it exactly at any
      shift)
    - checker: ``cell``, ``values`` lattice (piecewise bilinear on integer
      knots, so resampling is exact when every shift is a whole pixel)
    - sinusoid: ``waves`` list of [amplitude, kx, ky, phase]
    - noise: ``cell``, ``values`` lattice (smoothstep interpolation)
    """

    kind: str
    params: dict
    tint: list = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def evaluate(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "ramp":
            x0, y0, x1, y1 = p["extent"]
            c00, c10, c01, c11 = p["corners"]
            s = (X - x0) / (x1 - x0)
            t = (Y - y0) / (y1 - y0)
            return c00 * (1 - s) * (1 - t) + c10 * s * (1 - t) + c01 * (1 - s) * t + c11 * s * t
        if self.kind in ("checker", "noise"):
            return _lattice(X, Y, p["cell"], p["origin"], np.asarray(p["values"]), smooth=self.kind == "noise")
        if self.kind == "sinusoid":
            out = np.full(X.shape, 0.5)
            for amp, kx, ky, ph in p["waves"]:
                out = out + amp * np.sin(kx * X + ky * Y + ph)
            return out
        raise ValueError(f"unknown texture kind {self.kind!r}")


def _lattice(X, Y, cell, origin, values, smooth):
    gx = (X - origin[0]) / cell
    gy = (Y - origin[1]) / cell
    ny, nx = values.shape
    ix = np.floor(gx).astype(np.intp)
    iy = np.floor(gy).astype(np.intp)
    fx = gx - ix
    fy = gy - iy
    if smooth:
        fx = fx * fx * (3 - 2 * fx)
        fy = fy * fy * (3 - 2 * fy)
    ix0, iy0 = ix % nx, iy % ny
    ix1, iy1 = (ix + 1) % nx, (iy + 1) % ny
    return (values[iy0, ix0] * (1 - fx) * (1 - fy) + values[iy0, ix1] * fx * (1 - fy)
            + values[iy1, ix0] * (1 - fx) * fy + values[iy1, ix1] * fx * fy)


@dataclass
class Layer:
    disparity: float
    texture: Texture
    mask: str = "full"
    rects: list = field(default_factory=list)  # [x0, y0, x1, y1] in layer coordinates

    def alpha(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        if self.mask == "full":
            return np.ones(X.shape, dtype=bool)
        inside = np.zeros(X.shape, dtype=bool)
        for x0, y0, x1, y1 in self.rects:
            inside |= (X >= x0) & (X < x1) & (Y >= y0) & (Y < y1)
        if self.mask == "holes":
            return ~inside
        if self.mask == "object":
            return inside
        raise ValueError(f"unknown mask kind {self.mask!r}")


@dataclass
class SceneSpec:
    layers: list
    grid: tuple = (3, 3)
    spatial: tuple = (32, 32)
    channels: int = 1
    seed: int = 0
    sources: list | None = None
    disparity_range: tuple = (-4.0, 4.0)

    def __post_init__(self):
        self.grid = tuple(self.grid)
        self.spatial = tuple(self.spatial)
        self.disparity_range = tuple(self.disparity_range)
        lo, hi = self.disparity_range
        if not self.layers:
            raise ValueError("scene needs at least one layer")
        for layer in self.layers:
            if not lo - 1e-12 <= layer.disparity <= hi + 1e-12:
                raise ValueError(f"layer disparity {layer.disparity} outside range {self.disparity_range}")
        if self.layers[0].mask != "full":
            raise ValueError("the first (farthest) layer must be full so every pixel is covered")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def source_positions(self) -> list[tuple[int, int]]:
        if self.sources is None:
            return corner_positions(*self.grid)
        return [tuple(p) for p in self.sources]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["spatial"] = list(self.spatial)
        d["disparity_range"] = list(self.disparity_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["layers"] = [Layer(l["disparity"], Texture(**l["texture"]), l["mask"], l["rects"]) for l in d["layers"]]
        return cls(**d)


@dataclass
class GroundTruthBundle:
    """Rendered scene: light field, true disparity of the visible surface,
    visible-layer index per ray and occlusion masks per (source, target).

    ``occlusion[k, u, v, y, x]`` is True where the surface seen by target ray
    ``(x, y, u, v)`` is not visible from source ``k`` at the warped location,
    including the case that the location falls outside the source frame.
    """

    lf: LightField
    depth: DepthField
    visible: np.ndarray
    occlusion: np.ndarray
    sources: list
    spec: SceneSpec

    def sparse(self):
        return self.lf.sparse(self.sources)

    @property
    def valid(self) -> np.ndarray:
        """Target rays visible from every source, shape ``(M, N, H, W)``."""
        return ~self.occlusion.any(axis=0)


def render_scene(spec: SceneSpec) -> GroundTruthBundle:
    M, N = spec.grid
    H, W = spec.spatial
    uc, vc = (M - 1) / 2.0, (N - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(H, dtype=np.float64), np.arange(W, dtype=np.float64), indexing="ij")
    C = spec.channels
    views = np.zeros((M, N, H, W, C))
    visible = np.zeros((M, N, H, W), dtype=np.intp)
    disp = np.array([l.disparity for l in spec.layers])
    for u in range(M):
        for v in range(N):
            for k, layer in enumerate(spec.layers):
                # Chosen so that the warp x + d * (u - u') maps any view onto any other.
                X = xx + layer.disparity * (u - uc)
                Y = yy + layer.disparity * (v - vc)
                a = layer.alpha(X, Y)
                val = layer.texture.evaluate(X, Y)
                tint = np.asarray(layer.texture.tint[:C]) if C == 3 else np.ones(1)
                views[u, v][a] = val[a][:, None] * tint[None, :]
                visible[u, v][a] = k
    views = np.clip(views, 0.0, 1.0)
    depth = disp[visible]
    sources = spec.source_positions
    occlusion = np.zeros((len(sources), M, N, H, W), dtype=bool)
    for s, (su, sv) in enumerate(sources):
        for u in range(M):
            for v in range(N):
                occlusion[s, u, v] = _occluded(visible[u, v], visible[su, sv], disp, u - su, v - sv, xx, yy)
    bound = max(DEFAULT_DISPARITY_BOUND, float(np.abs(disp).max()))
    return GroundTruthBundle(LightField(views), DepthField(depth, bound), visible, occlusion, sources, spec)


def _occluded(vis_t, vis_s, disp, du, dv, xx, yy):
    H, W = vis_t.shape
    d = disp[vis_t]
    px = xx + d * du
    py = yy + d * dv
    out = (px < 0) | (px > W - 1) | (py < 0) | (py > H - 1)
    pxc = np.clip(px, 0, W - 1)
    pyc = np.clip(py, 0, H - 1)
    x0 = np.floor(pxc).astype(np.intp)
    y0 = np.floor(pyc).astype(np.intp)
    fx = pxc - x0
    fy = pyc - y0
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    occ = vis_s[y0, x0] != vis_t
    occ |= (fx > 0) & (vis_s[y0, x1] != vis_t)
    occ |= (fy > 0) & (vis_s[y1, x0] != vis_t)
    occ |= (fx > 0) & (fy > 0) & (vis_s[y1, x1] != vis_t)
    return out | occ


# -- random scene generation ---------------------------------------------------------

@dataclass
class SceneDistribution:
    grid: tuple = (3, 3)
    spatial: tuple = (32, 32)
    disparity_range: tuple = (-4.0, 4.0)
    n_layers: int = 2
    textures: tuple = ("noise", "checker", "sinusoid")
    near_mask: str = "object"
    channels: int = 1
    texture_scale: float = 1.0  # multiplies checker/noise cell sizes and sinusoid periods


def random_texture(kind: str, rng: np.random.Generator, extent, channels: int = 1, scale: float = 1.0) -> Texture:
    x0, y0, x1, y1 = extent
    tint = [1.0, 1.0, 1.0] if channels == 1 else [float(t) for t in rng.uniform(0.4, 1.0, size=3)]
    if kind == "ramp":
        return Texture("ramp", {"extent": [x0, y0, x1, y1], "corners": [float(c) for c in rng.uniform(0.1, 0.9, 4)]}, tint)
    if kind in ("checker", "noise"):
        if kind == "checker":
            # Integer cells on an integer lattice: exact under integer shifts.
            cell = float(max(1, round(scale * int(rng.integers(3, 7)))))
            x0, y0 = math.floor(x0), math.floor(y0)
        else:
            cell = scale * float(rng.uniform(3.0, 7.0))
        nx = int(math.ceil((x1 - x0) / cell)) + 2
        ny = int(math.ceil((y1 - y0) / cell)) + 2
        if kind == "checker":
            sign = np.where((np.add.outer(np.arange(ny), np.arange(nx)) % 2) == 0, 1.0, -1.0)
            contrast = rng.uniform(0.15, 0.35)
            values = 0.5 + contrast * sign + rng.uniform(-0.1, 0.1, size=(ny, nx))
        else:
            values = rng.uniform(0.05, 0.95, size=(ny, nx))
        return Texture(kind, {"cell": cell, "origin": [x0 - cell, y0 - cell], "values": values.tolist()}, tint)
    if kind == "sinusoid":
        waves = []
        for _ in range(3):
            freq = rng.uniform(0.15, 0.6) / scale
            theta = rng.uniform(0, np.pi)
            waves.append([float(rng.uniform(0.08, 0.14)), float(freq * np.cos(theta)),
                          float(freq * np.sin(theta)), float(rng.uniform(0, 2 * np.pi))])
        return Texture("sinusoid", {"waves": waves}, tint)
    raise ValueError(f"unknown texture kind {kind!r}")


def _layer_extent(spatial, grid, dmax):
    H, W = spatial
    margin = abs(dmax) * max(grid) + 2
    return [-margin, -margin, W + margin, H + margin]


def random_scene(rng: np.random.Generator, dist: SceneDistribution, disparities, seed: int) -> SceneSpec:
    H, W = dist.spatial
    dmax = max(abs(dist.disparity_range[0]), abs(dist.disparity_range[1]))
    extent = _layer_extent(dist.spatial, dist.grid, dmax)
    layers = []
    for k, d in enumerate(disparities):
        kind = dist.textures[int(rng.integers(len(dist.textures)))]
        tex = random_texture(kind, rng, extent, dist.channels, dist.texture_scale)
        if k == 0:
            layers.append(Layer(float(d), tex, "full"))
            continue
        rects = []
        for _ in range(int(rng.integers(1, 3))):
            w = rng.uniform(0.25, 0.5) * W
            h = rng.uniform(0.25, 0.5) * H
            cx = rng.uniform(0.2, 0.8) * W
            cy = rng.uniform(0.2, 0.8) * H
            rects.append([float(cx - w / 2), float(cy - h / 2), float(cx + w / 2), float(cy + h / 2)])
        layers.append(Layer(float(d), tex, dist.near_mask, rects))
    return SceneSpec(layers, dist.grid, dist.spatial, dist.channels, seed, None, dist.disparity_range)


def make_dataset(n_scenes: int, dist: SceneDistribution | None = None, seed: int = 0) -> list[GroundTruthBundle]:
    """Render ``n_scenes`` random scenes.

    Layer disparities are stratified over ``dist.disparity_range``: the pooled
    values are an evenly spaced grid including both endpoints, assigned to
    layers in a seeded random order.
    """
    if n_scenes < 1:
        raise ValueError("n_scenes must be >= 1")
    dist = dist or SceneDistribution()
    rng = np.random.default_rng(seed)
    lo, hi = dist.disparity_range
    pool = np.linspace(lo, hi, n_scenes * dist.n_layers)
    pool = pool[rng.permutation(pool.size)].reshape(n_scenes, dist.n_layers)
    return [render_scene(random_scene(rng, dist, pool[i], seed=int(seed) * 100003 + i)) for i in range(n_scenes)]


def split_dataset(bundles: list, val_fraction: float = 0.2) -> tuple[list, list]:
    """Deterministic split: the last ``ceil(n * val_fraction)`` scenes validate."""
    n_val = int(math.ceil(len(bundles) * val_fraction)) if len(bundles) > 1 else 0
    cut = len(bundles) - n_val
    return bundles[:cut], bundles[cut:]


def single_layer_scene(d: float, grid=(3, 3), spatial=(32, 32), texture: str = "ramp", seed: int = 0,
                       channels: int = 1, disparity_range=(-4.0, 4.0), texture_scale: float = 1.0) -> SceneSpec:
    rng = np.random.default_rng(seed)
    extent = _layer_extent(spatial, grid, max(abs(d), 1.0))
    tex = random_texture(texture, rng, extent, channels, texture_scale)
    return SceneSpec([Layer(float(d), tex, "full")], grid, spatial, channels, seed, None, disparity_range)
