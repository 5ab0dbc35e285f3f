"""Depth estimation, warping and light-field blending networks."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .autodiff import Conv, ConvSpec, Module, Tensor
from .core import DEFAULT_DISPARITY_BOUND, DepthField, LightField, SparseLightField, corner_positions
from .warp import WarpStack, warp_tensor

# (kernel, dilation) per depth-net layer: two dilated 7x7, two 5x5, five 3x3.
DEPTH_LAYERS = ((7, 2), (7, 2), (5, 1), (5, 1), (3, 1), (3, 1), (3, 1), (3, 1), (3, 1))


@dataclass
class ModelConfig:
    grid: tuple = (7, 7)
    sources: list | None = None
    channels: int = 1
    depth_width: int = 64
    depth_layers: tuple = DEPTH_LAYERS
    blend_width: int = 64
    blend_blocks: int = 3
    spatial_dilation: int = 2
    tail_widths: tuple | None = None
    blend_mode: str = "light-field"
    disparity_bound: float = DEFAULT_DISPARITY_BOUND
    input_offset: float = 0.5  # subtracted from the views fed to the depth net
    seed: int = 0

    def __post_init__(self):
        self.grid = tuple(int(g) for g in self.grid)
        self.depth_layers = tuple(tuple(int(i) for i in l) for l in self.depth_layers)
        if self.sources is None:
            self.sources = corner_positions(*self.grid)
        self.sources = [tuple(int(i) for i in p) for p in self.sources]
        if self.tail_widths is None:
            half = max(1, self.blend_width // 2)
            self.tail_widths = (half, half)
        self.tail_widths = tuple(int(t) for t in self.tail_widths)
        if self.blend_mode not in ("light-field", "view"):
            raise ValueError(f"blend_mode must be 'light-field' or 'view', got {self.blend_mode!r}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")

    @property
    def num_targets(self) -> int:
        return self.grid[0] * self.grid[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = list(self.grid)
        d["sources"] = [list(p) for p in self.sources]
        d["depth_layers"] = [list(l) for l in self.depth_layers]
        d["tail_widths"] = list(self.tail_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        keys = cls.__dataclass_fields__.keys()
        return cls(**{k: v for k, v in d.items() if k in keys})


def depth_layer_specs(cfg: ModelConfig) -> list[ConvSpec]:
    K = len(cfg.sources)
    specs = []
    n = len(cfg.depth_layers)
    for i, (k, dil) in enumerate(cfg.depth_layers):
        cin = K * cfg.channels if i == 0 else cfg.depth_width
        cout = cfg.num_targets if i == n - 1 else cfg.depth_width
        specs.append(ConvSpec(cin, cout, (k, k), dil))
    return specs


def receptive_field(specs) -> int:
    """Analytic receptive field (pixels along one axis) of a conv stack.

    Accepts :class:`ConvSpec` objects or ``(kernel, dilation)`` pairs.
    """
    rf, jump = 1, 1
    for s in specs:
        if isinstance(s, ConvSpec):
            k, d, st = s.kernel[0], s.dilation[0], s.stride[0]
        else:
            k, d = s[0], s[1]
            st = s[2] if len(s) > 2 else 1
        rf += (k - 1) * d * jump
        jump *= st
    return rf


def empirical_receptive_field(layers) -> int:
    """Measure the output support of a single-channel conv stack with positive
    weights in response to one input impulse."""
    layers = [tuple(l) for l in layers]
    size = 1 + 2 * sum(k * d for k, d, *_ in layers) + 8
    x = np.zeros((1, 1, size, size))
    c = size // 2
    x[0, 0, c, c] = 1.0
    t = Tensor(x)
    with ad.no_grad():
        for k, d, *_ in layers:
            w = np.ones((1, 1, k, k))
            t = ad.relu(ad.conv2d(t, w, None, 1, d * (k - 1) // 2, d))
    row = np.nonzero(t.data[0, 0, c] > 0)[0]
    return int(row.max() - row.min() + 1)


class DepthNet(Module):
    """Nine-layer conv stack mapping stacked input views to one disparity map
    per target view, squashed to ``bound * tanh``."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.specs = depth_layer_specs(cfg)
        n = len(self.specs)
        self.convs = [Conv(s, rng, zero=(i == n - 1)) for i, s in enumerate(self.specs)]
        self.bound = cfg.disparity_bound

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.convs)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < n - 1:
                x = ad.relu(x)
        return ad.mul(ad.tanh(x), self.bound)


class LightFieldBlendNet(Module):
    """Per-target feature extraction, alternating spatial/angular convs and a
    3-d conv tail over (view, y, x) producing the residual."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        F, K, C = cfg.blend_width, len(cfg.sources), cfg.channels
        self.grid = cfg.grid
        self.feature = Conv(ConvSpec(K * C, F, (3, 3)), rng)
        self.spatial = [Conv(ConvSpec(F, F, (3, 3), cfg.spatial_dilation), rng) for _ in range(cfg.blend_blocks)]
        self.angular = [Conv(ConvSpec(F, F, (3, 3)), rng) for _ in range(cfg.blend_blocks)]
        widths = (F,) + cfg.tail_widths + (C,)
        n = len(widths) - 1
        self.tail = [Conv(ConvSpec(widths[i], widths[i + 1], (3, 3, 3)), rng, zero=(i == n - 1)) for i in range(n)]

    def __call__(self, feats_in: Tensor) -> Tensor:
        """``feats_in``: ``[T, K*C, H, W]`` -> residual ``[1, C, T, H, W]``."""
        T, _, H, W = feats_in.shape
        x = ad.relu(self.feature(feats_in))
        for s_conv, a_conv in zip(self.spatial, self.angular):
            x = ad.relu(s_conv(x))
            x = ad.reshape_views(x, "angular", 1, self.grid, (H, W))
            x = ad.relu(a_conv(x))
            x = ad.reshape_views(x, "spatial", 1, self.grid, (H, W))
        F = x.shape[1]
        x = ad.transpose(ad.reshape(x, (1, T, F, H, W)), (0, 2, 1, 3, 4))
        n = len(self.tail)
        for i, conv in enumerate(self.tail):
            x = conv(x)
            if i < n - 1:
                x = ad.relu(x)
        return x


def _view_tail_width(cfg: ModelConfig) -> int:
    """Hidden width for the 2-d tail that best matches the 3-d tail's
    parameter count."""
    F, C = cfg.blend_width, cfg.channels
    widths = (F,) + cfg.tail_widths + (C,)
    target = sum(widths[i] * widths[i + 1] * 27 + widths[i + 1] for i in range(len(widths) - 1))

    def count(h):
        w = (F,) + (h,) * len(cfg.tail_widths) + (C,)
        return sum(w[i] * w[i + 1] * 9 + w[i + 1] for i in range(len(w) - 1))

    return min(range(1, 8 * F + 1), key=lambda h: abs(count(h) - target))


class ViewBlendNet(Module):
    """Baseline that blends each target view independently: the same feature
    extractor followed by 2-d convs only."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        F, K, C = cfg.blend_width, len(cfg.sources), cfg.channels
        self.feature = Conv(ConvSpec(K * C, F, (3, 3)), rng)
        self.spatial = [Conv(ConvSpec(F, F, (3, 3), cfg.spatial_dilation), rng) for _ in range(cfg.blend_blocks)]
        self.local = [Conv(ConvSpec(F, F, (3, 3)), rng) for _ in range(cfg.blend_blocks)]
        h = _view_tail_width(cfg)
        widths = (F,) + (h,) * len(cfg.tail_widths) + (C,)
        n = len(widths) - 1
        self.tail = [Conv(ConvSpec(widths[i], widths[i + 1], (3, 3)), rng, zero=(i == n - 1)) for i in range(n)]

    def __call__(self, feats_in: Tensor) -> Tensor:
        T, _, H, W = feats_in.shape
        x = ad.relu(self.feature(feats_in))
        for s_conv, l_conv in zip(self.spatial, self.local):
            x = ad.relu(s_conv(x))
            x = ad.relu(l_conv(x))
        n = len(self.tail)
        for i, conv in enumerate(self.tail):
            x = conv(x)
            if i < n - 1:
                x = ad.relu(x)
        C = x.shape[1]
        return ad.transpose(ad.reshape(x, (1, T, C, H, W)), (0, 2, 1, 3, 4))


class ForwardResult(NamedTuple):
    depth: Tensor  # (M, N, H, W)
    warps: Tensor  # (K, M, N, H, W, C)
    pred: Tensor  # (M, N, H, W, C)


class LFASRModel(Module):
    """Sparse views -> per-ray disparity -> warped stack -> blended light field."""

    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.depth = DepthNet(cfg, rng)
        self.blend = (LightFieldBlendNet if cfg.blend_mode == "light-field" else ViewBlendNet)(cfg, rng)

    def describe(self) -> dict:
        """Model-description record stored next to the weights."""
        return {
            "config": self.cfg.to_dict(),
            "depth_layers": [s.to_dict() for s in self.depth.specs],
            "receptive_field": receptive_field(self.depth.specs),
            "num_parameters": {"depth": self.depth.num_parameters(), "blend": self.blend.num_parameters()},
            "unspecified_choices": {
                "blend_blocks": "3 spatial/angular pairs",
                "tail": "three 3x3x3 convolutions, unit stride",
                "first_input_view": "corner (0, 0)",
                "channel_mode": "luminance" if self.cfg.channels == 1 else "rgb",
            },
        }

    def estimate_depth(self, sources: Tensor) -> Tensor:
        """``sources`` ``(K, H, W, C)`` -> disparity ``(M, N, H, W)``."""
        K, H, W, C = sources.shape
        if K * C != self.depth.specs[0].in_channels:
            raise ValueError(f"depth net expects {self.depth.specs[0].in_channels} input channels, got {K}x{C}")
        x = ad.reshape(ad.transpose(sources, (0, 3, 1, 2)), (1, K * C, H, W))
        if self.cfg.input_offset:
            x = ad.sub(x, self.cfg.input_offset)
        d = self.depth(x)
        M, N = self.cfg.grid
        return ad.reshape(d, (M, N, H, W))

    def blend_warps(self, warps: Tensor) -> Tensor:
        """``warps`` ``(K, M, N, H, W, C)`` -> prediction ``(M, N, H, W, C)``:
        warp from the first input view plus the learned residual."""
        K, M, N, H, W, C = warps.shape
        if (M, N) != self.cfg.grid or K != len(self.cfg.sources) or C != self.cfg.channels:
            raise ValueError(f"warp stack {warps.shape} does not match model grid {self.cfg.grid}")
        x = ad.reshape(ad.transpose(warps, (1, 2, 0, 5, 3, 4)), (M * N, K * C, H, W))
        res = self.blend(x)  # [1, C, T, H, W]
        res = ad.transpose(ad.reshape(res, (C, M, N, H, W)), (1, 2, 3, 4, 0))
        return ad.add(ad.getitem(warps, 0), res)

    def forward(self, sources) -> ForwardResult:
        sources = ad.as_tensor(sources)
        depth = self.estimate_depth(sources)
        if not np.all(np.isfinite(depth.data)):
            raise FloatingPointError("depth net produced non-finite disparity")
        warps = warp_tensor(sources, self.cfg.sources, depth)
        return ForwardResult(depth, warps, self.blend_warps(warps))

    __call__ = forward

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(arrays)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"{k}: checkpoint shape {arrays[k].shape} != model shape {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float64)


# -- domain-level wrappers ----------------------------------------------------------------

def _ycbcr(a: np.ndarray) -> np.ndarray:
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    y = 0.299 * r + 0.587 * g + 0.114 * b
    return np.stack([y, (b - y) * 0.564, (r - y) * 0.713], axis=-1)


def _rgb(ycc: np.ndarray) -> np.ndarray:
    y, cb, cr = ycc[..., 0], ycc[..., 1], ycc[..., 2]
    r = y + cr / 0.713
    b = y + cb / 0.564
    g = (y - 0.299 * r - 0.114 * b) / 0.587
    return np.stack([r, g, b], axis=-1)


def _check_sparse(sparse: SparseLightField, model: LFASRModel) -> None:
    if tuple(sparse.grid_size) != model.cfg.grid or list(sparse.positions) != model.cfg.sources:
        raise ValueError(f"sparse input (grid {sparse.grid_size}, positions {sparse.positions}) does not match "
                         f"model (grid {model.cfg.grid}, positions {model.cfg.sources})")


def _model_input(sparse: SparseLightField, model: LFASRModel) -> np.ndarray:
    if sparse.channels == model.cfg.channels:
        return sparse.views
    if sparse.channels == 3 and model.cfg.channels == 1:
        return _ycbcr(sparse.views)[..., :1]
    raise ValueError(f"model expects {model.cfg.channels} channels, input has {sparse.channels}")


def estimate_depth(sparse: SparseLightField, model: LFASRModel) -> DepthField:
    _check_sparse(sparse, model)
    with ad.no_grad():
        d = model.estimate_depth(Tensor(_model_input(sparse, model)))
    return DepthField(d.data, model.cfg.disparity_bound)


def blend(warp_stack: WarpStack, model: LFASRModel) -> Tensor:
    """Blended light field as a tensor (unclamped; clamp only on export)."""
    return model.blend_warps(warp_stack.values)


def super_resolve(sparse: SparseLightField, model: LFASRModel) -> tuple[LightField, DepthField, WarpStack]:
    """Full reconstruction with intermediates. In luminance mode an RGB input
    has its chroma warped from the first input view by the estimated depth."""
    _check_sparse(sparse, model)
    with ad.no_grad():
        out = model.forward(Tensor(_model_input(sparse, model)))
        pred = out.pred.data
        warps = out.warps
        if sparse.channels == 3 and model.cfg.channels == 1:
            ycc = _ycbcr(sparse.views)
            chroma = warp_tensor(Tensor(ycc[..., 1:]), model.cfg.sources, out.depth).data[0]
            pred = _rgb(np.concatenate([pred, chroma], axis=-1))
            warps = warp_tensor(Tensor(sparse.views), model.cfg.sources, out.depth)
    lf = LightField(np.clip(pred, 0.0, 1.0))
    return lf, DepthField(out.depth.data, model.cfg.disparity_bound), WarpStack(warps, list(model.cfg.sources))
