"""Reading and writing view-grid folders, PFM disparity maps and configs."""
from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import LightField

log = logging.getLogger(__name__)

VIEW_PATTERN = "view_{u:02d}_{v:02d}.png"
SIDECAR = "lightfield.json"
_VIEW_RE = re.compile(r"^view_(\d+)_(\d+)\.png$")


class LightFieldIOError(OSError):
    pass


class PFMError(ValueError):
    pass


@dataclass
class ViewGridManifest:
    directory: Path
    grid_size: tuple[int, int] | None = None
    spatial_size: tuple[int, int] | None = None
    channels: int | None = None
    pattern: str = VIEW_PATTERN

    def __post_init__(self):
        self.directory = Path(self.directory)

    def path(self, u: int, v: int) -> Path:
        return self.directory / self.pattern.format(u=u, v=v)

    @classmethod
    def from_directory(cls, directory) -> "ViewGridManifest":
        """Read the sidecar if present, else infer the grid from file names."""
        directory = Path(directory)
        side = directory / SIDECAR
        if side.exists():
            meta = json.loads(side.read_text())
            return cls(directory, tuple(meta["grid_size"]), tuple(meta["spatial_size"]), meta["channels"])
        idx = [tuple(int(g) for g in m.groups()) for m in (_VIEW_RE.match(p.name) for p in directory.iterdir()) if m]
        if not idx:
            raise LightFieldIOError(f"{directory}: no view_UU_VV.png files and no {SIDECAR}")
        M = max(i[0] for i in idx) + 1
        N = max(i[1] for i in idx) + 1
        return cls(directory, (M, N))


def _load_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        a = np.asarray(im, dtype=np.float64) / 255.0
    return a[..., None] if a.ndim == 2 else a


def load_light_field(manifest: ViewGridManifest | str | Path) -> LightField:
    if not isinstance(manifest, ViewGridManifest):
        manifest = ViewGridManifest.from_directory(manifest)
    if manifest.grid_size is None:
        manifest = ViewGridManifest.from_directory(manifest.directory)
    M, N = manifest.grid_size
    views = None
    for u in range(M):
        for v in range(N):
            p = manifest.path(u, v)
            if not p.exists():
                raise LightFieldIOError(f"missing view (u={u}, v={v}): {p}")
            try:
                img = _load_image(p)
            except OSError as exc:
                raise LightFieldIOError(f"cannot decode view (u={u}, v={v}) {p}: {exc}") from exc
            if views is None:
                views = np.zeros((M, N) + img.shape)
            elif img.shape != views.shape[2:]:
                raise LightFieldIOError(f"{p}: size {img.shape} differs from first view {views.shape[2:]}")
            views[u, v] = img
    expected = manifest.spatial_size
    if expected is not None and tuple(views.shape[2:4]) != tuple(expected):
        raise LightFieldIOError(f"{manifest.directory}: views are {views.shape[2:4]}, sidecar says {expected}")
    return LightField(views)


def save_light_field(lf: LightField | np.ndarray, directory, pattern: str = VIEW_PATTERN) -> int:
    """Write one 8-bit PNG per view plus a JSON sidecar. Values are clamped to
    ``[0, 1]``; returns the number of clamped samples."""
    views = np.asarray(lf.views if isinstance(lf, LightField) else lf, dtype=np.float64)
    if views.ndim == 4:
        views = views[..., None]
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    clamped = int(np.count_nonzero((views < 0) | (views > 1)))
    if clamped:
        log.info("clamped %d samples to [0, 1] while saving %s", clamped, directory)
    q = np.round(np.clip(views, 0.0, 1.0) * 255.0).astype(np.uint8)
    M, N, H, W, C = views.shape
    for u in range(M):
        for v in range(N):
            path = directory / pattern.format(u=u, v=v)
            img = q[u, v, :, :, 0] if C == 1 else q[u, v]
            try:
                Image.fromarray(img).save(path, format="PNG")
            except OSError as exc:
                raise LightFieldIOError(f"cannot write view (u={u}, v={v}) to {path}: {exc}") from exc
    meta = {"grid_size": [M, N], "spatial_size": [H, W], "channels": C, "pattern": pattern}
    (directory / SIDECAR).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return clamped


def save_mask(mask: np.ndarray, path) -> None:
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


# -- PFM ------------------------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    """Single-channel little-endian PFM (scale -1.0). Rows are stored bottom
    to top as the format requires."""
    a = np.asarray(data)
    if a.ndim != 2:
        raise ValueError(f"write_pfm expects a 2-d map, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("PFM data must be finite")
    H, W = a.shape
    with open(path, "wb") as fh:
        fh.write(b"Pf\n%d %d\n-1.0\n" % (W, H))
        fh.write(np.flipud(a).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    # Header: three whitespace-separated fields (type, "W H", scale), each line
    # terminated by a single whitespace byte.
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PFMError(f"{path}: truncated header at byte {pos}")
        tokens.append((raw[start:pos], start))
    pos += 1
    kind, _ = tokens[0]
    if kind not in (b"Pf", b"PF"):
        raise PFMError(f"{path}: bad magic {kind!r} at byte 0")
    channels = 1 if kind == b"Pf" else 3
    try:
        W, H = int(tokens[1][0]), int(tokens[2][0])
    except ValueError:
        raise PFMError(f"{path}: bad dimensions at byte {tokens[1][1]}") from None
    try:
        scale = float(tokens[3][0])
    except ValueError:
        raise PFMError(f"{path}: bad scale at byte {tokens[3][1]}") from None
    if W <= 0 or H <= 0:
        raise PFMError(f"{path}: non-positive dimensions at byte {tokens[1][1]}")
    dtype = "<f4" if scale < 0 else ">f4"
    count = W * H * channels
    if len(raw) - pos < 4 * count:
        raise PFMError(f"{path}: payload truncated at byte {len(raw)}, need {4 * count} bytes from {pos}")
    a = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).astype(np.float32)
    a = a.reshape((H, W) if channels == 1 else (H, W, 3))
    return np.flipud(a).copy()


# -- config -----------------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    input_grid: tuple = (2, 2)
    output_grid: tuple = (7, 7)
    patch_size: int = 96
    batch_size: int = 1
    learning_rate: float = 1e-4
    lr_decay_factor: float = 0.5
    lr_decay_every: int = 5000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    lambda_epi: float = 1.0
    smooth_weight: float = 0.01
    channel_mode: str = "luminance"
    seed: int = 0
    iterations: int = 1000
    checkpoint_every: int = 0
    depth_width: int = 64
    blend_width: int = 64
    blend_blocks: int = 3
    spatial_dilation: int = 2
    disparity_bound: float = 21.5
    input_offset: float = 0.5
    blend_mode: str = "light-field"
    warnings: list = field(default_factory=list)

    def __post_init__(self):
        self.input_grid = tuple(self.input_grid)
        self.output_grid = tuple(self.output_grid)
        if self.lambda_epi < 0:
            raise ValueError("lambda_epi must be >= 0")
        if self.channel_mode not in ("luminance", "rgb"):
            raise ValueError("channel_mode must be 'luminance' or 'rgb'")
        if self.input_grid != (2, 2):
            raise ValueError("only four-corner (2x2) inputs are supported")
        if self.patch_size < 1 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("patch_size and batch_size must be >= 1, iterations >= 0")
        from .model import DEPTH_LAYERS, receptive_field

        rf = receptive_field(DEPTH_LAYERS)
        msg = f"patch_size {self.patch_size} is smaller than the depth net receptive field {rf}"
        if self.patch_size < rf and msg not in self.warnings:
            self.warnings.append(msg)
            warnings.warn(msg, stacklevel=2)

    @property
    def channels(self) -> int:
        return 1 if self.channel_mode == "luminance" else 3

    def lr_at(self, iteration: int) -> float:
        return self.learning_rate * self.lr_decay_factor ** (iteration // self.lr_decay_every)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_grid"] = list(self.input_grid)
        d["output_grid"] = list(self.output_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d.pop("warnings", None)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(**d)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))
