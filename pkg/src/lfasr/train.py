"""Adam training loop, patch sampling, checkpoints and evaluation."""
from __future__ import annotations

import csv
import logging
import math
import shutil
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, load_arrays, save_arrays
from .core import corner_positions, to_luminance
from .io import ExperimentConfig
from .losses import LossReport, total_loss
from .metrics import EvalReport, evaluate_light_field
from .model import LFASRModel, ModelConfig, super_resolve
from .synth import SceneDistribution, make_dataset, render_scene, single_layer_scene

log = logging.getLogger(__name__)

LOG_FIELDS = ["iteration", "l_d", "l_b", "l_e", "total", "lr"]


class TrainingDiverged(RuntimeError):
    pass


# -- optimizer ------------------------------------------------------------------------------

@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None], state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place. Missing gradients count as zero."""
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- data -------------------------------------------------------------------------------------

@dataclass
class TrainingExample:
    gt: np.ndarray  # (M, N, p, p, C)
    sources: np.ndarray  # (K, p, p, C)
    depth: np.ndarray  # (M, N, p, p) true disparity, for diagnostics only
    offset: tuple[int, int]


def sample_patch(bundle, patch_size: int, rng: np.random.Generator, channels: int = 1,
                 sources=None) -> TrainingExample:
    """Crop the same random ``patch_size`` window from every view."""
    views = bundle.lf.views
    M, N, H, W, C = views.shape
    if patch_size > H or patch_size > W:
        raise ValueError(f"patch {patch_size} larger than image {H}x{W}")
    y0 = int(rng.integers(0, H - patch_size + 1))
    x0 = int(rng.integers(0, W - patch_size + 1))
    gt = views[:, :, y0 : y0 + patch_size, x0 : x0 + patch_size]
    if channels == 1 and C == 3:
        gt = to_luminance(gt)
    elif channels != C:
        raise ValueError(f"cannot train {channels}-channel model on {C}-channel data")
    sources = sources or corner_positions(M, N)
    src = np.stack([gt[u, v] for u, v in sources])
    depth = bundle.depth.disparity[:, :, y0 : y0 + patch_size, x0 : x0 + patch_size]
    return TrainingExample(np.array(gt), src, np.array(depth), (y0, x0))


# -- state ------------------------------------------------------------------------------------

def model_config_from(cfg: ExperimentConfig, blend_mode: str | None = None) -> ModelConfig:
    return ModelConfig(
        grid=cfg.output_grid,
        channels=cfg.channels,
        depth_width=cfg.depth_width,
        blend_width=cfg.blend_width,
        blend_blocks=cfg.blend_blocks,
        spatial_dilation=cfg.spatial_dilation,
        blend_mode=blend_mode or cfg.blend_mode,
        disparity_bound=cfg.disparity_bound,
        input_offset=cfg.input_offset,
        seed=cfg.seed,
    )


@dataclass
class TrainState:
    config: ExperimentConfig
    model: LFASRModel
    adam: AdamState
    rng: np.random.Generator
    iteration: int = 0
    history: list = field(default_factory=list)

    @classmethod
    def fresh(cls, cfg: ExperimentConfig) -> "TrainState":
        model = LFASRModel(model_config_from(cfg))
        adam = AdamState(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        # Model init uses cfg.seed; the sampling stream is kept separate.
        rng = np.random.default_rng([cfg.seed, 1])
        return cls(cfg, model, adam, rng)

    def save(self, path) -> None:
        arrays = {}
        for k, v in self.model.state_arrays().items():
            arrays[f"param/{k}"] = v
        for k, v in self.adam.m.items():
            arrays[f"adam_m/{k}"] = v
        for k, v in self.adam.v.items():
            arrays[f"adam_v/{k}"] = v
        meta = {
            "format": "lfasr-train-state",
            "model": self.model.describe(),
            "experiment": self.config.to_dict(),
            "iteration": self.iteration,
            "adam": {"step": self.adam.step, "beta1": self.adam.beta1, "beta2": self.adam.beta2, "eps": self.adam.eps},
            "rng": self.rng.bit_generator.state,
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "TrainState":
        arrays, meta = load_arrays(path)
        cfg = ExperimentConfig.from_dict(meta["experiment"])
        model = LFASRModel(ModelConfig.from_dict(meta["model"]["config"]))
        model.load_state_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
        a = meta["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["step"],
                         {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam_m/")},
                         {k[7:]: v.copy() for k, v in arrays.items() if k.startswith("adam_v/")})
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        return cls(cfg, model, adam, rng, meta["iteration"])


def load_model(path) -> LFASRModel:
    """Model weights from a training checkpoint."""
    arrays, meta = load_arrays(path)
    model = LFASRModel(ModelConfig.from_dict(meta["model"]["config"]))
    model.load_state_arrays({k[6:]: v for k, v in arrays.items() if k.startswith("param/")})
    return model


# -- training -----------------------------------------------------------------------------------

def train_step(state: TrainState, dataset: list) -> LossReport:
    """One Adam update on the mean loss of ``batch_size`` random patches."""
    cfg = state.config
    reports = []
    for _ in range(cfg.batch_size):
        bundle = dataset[int(state.rng.integers(len(dataset)))]
        ex = sample_patch(bundle, cfg.patch_size, state.rng, cfg.channels, state.model.cfg.sources)
        out = state.model.forward(Tensor(ex.sources))
        reports.append(total_loss(ex.gt, out.warps, out.depth, out.pred, cfg.lambda_epi, cfg.smooth_weight))
    rep = reports[0] if len(reports) == 1 else LossReport.mean(reports)
    if not math.isfinite(rep.total):
        raise TrainingDiverged(f"total loss is {rep.total} at iteration {state.iteration}")
    state.model.zero_grad()
    rep.tensor.backward()
    params = state.model.named_parameters()
    lr = cfg.lr_at(state.iteration)
    adam_step(params, {k: p.grad for k, p in params.items()}, state.adam, lr)
    state.history.append({"iteration": state.iteration, **rep.as_row(), "lr": lr})
    state.iteration += 1
    rep.tensor = None
    return rep


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def train(cfg: ExperimentConfig, dataset: list, out_dir=None, state: TrainState | None = None,
          progress=None) -> TrainState:
    """Run ``cfg.iterations`` total iterations (resuming from ``state``).

    With ``out_dir``: a CSV log ``train_log.csv``, ``ckpt_<iter>.ckpt`` at the
    start, every ``cfg.checkpoint_every`` iterations and at the end, and
    ``model.ckpt`` holding the latest state.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    state = state or TrainState.fresh(cfg)
    out = Path(out_dir) if out_dir is not None else None
    logf = writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_path = out / "train_log.csv"
        resume = state.iteration > 0 and log_path.exists()
        logf = open(log_path, "a" if resume else "w", newline="")
        writer = csv.writer(logf)
        if not resume:
            writer.writerow(LOG_FIELDS)
        _checkpoint(state, out)
    try:
        while state.iteration < cfg.iterations:
            try:
                train_step(state, dataset)
            except (TrainingDiverged, FloatingPointError) as exc:
                raise TrainingDiverged(f"{exc}; last checkpoint kept in {out}") from exc
            if writer is not None:
                writer.writerow([_fmt(state.history[-1][k]) for k in LOG_FIELDS])
            if progress is not None:
                progress(state)
            if out is not None and cfg.checkpoint_every and state.iteration % cfg.checkpoint_every == 0:
                _checkpoint(state, out)
        if out is not None:
            _checkpoint(state, out)
    finally:
        if logf is not None:
            logf.close()
    return state


def _checkpoint(state: TrainState, out: Path) -> Path:
    path = out / f"ckpt_{state.iteration:06d}.ckpt"
    if not path.exists():
        state.save(path)
    shutil.copyfile(path, out / "model.ckpt")
    return path


# -- evaluation ---------------------------------------------------------------------------------

def evaluate(model: LFASRModel, dataset: list, view_blend_model: LFASRModel | None = None,
             warp_only: bool = True, names=None, with_pr: bool = True) -> dict[str, list[EvalReport]]:
    """Per-scene reports for the model, its warp-only baseline (the warp
    from the first input view, skipping blending) and optionally a
    view-blending model."""
    names = names or [f"scene_{i:03d}" for i in range(len(dataset))]
    out: dict[str, list[EvalReport]] = {"light-field-blend" if model.cfg.blend_mode == "light-field" else "view-blend": []}
    main = next(iter(out))
    if warp_only:
        out["warp-only"] = []
    if view_blend_model is not None:
        out["view-blend"] = []
    for name, bundle in zip(names, dataset):
        gt = bundle.lf.views
        sources = model.cfg.sources
        sparse = bundle.lf.sparse(sources)
        pred, _, warps = super_resolve(sparse, model)
        out[main].append(evaluate_light_field(gt, pred.views, sources, name, main, with_pr=with_pr))
        if warp_only:
            base = np.clip(warps.array[0], 0.0, 1.0)
            out["warp-only"].append(evaluate_light_field(gt, base, sources, name, "warp-only", with_pr=with_pr))
        if view_blend_model is not None:
            vpred, _, _ = super_resolve(sparse, view_blend_model)
            out["view-blend"].append(evaluate_light_field(gt, vpred.views, sources, name, "view-blend", with_pr=with_pr))
    return out


def mean_psnr(reports: list[EvalReport]) -> float:
    return float(np.mean([r.mean_psnr() for r in reports]))


# Scenes are rendered larger than the patches so crops land at varied offsets.
TOY_SCENES = SceneDistribution(grid=(3, 3), spatial=(48, 48), texture_scale=2.5)


def toy_config(**overrides) -> ExperimentConfig:
    """Small configuration for desk-scale runs: 2x2 -> 3x3, 32x32 luminance
    patches, narrow networks, four patches per update."""
    base = dict(input_grid=(2, 2), output_grid=(3, 3), patch_size=32, batch_size=4, learning_rate=1e-3,
                lr_decay_every=200, iterations=500, depth_width=16, blend_width=16,
                channel_mode="luminance", seed=0)
    base.update(overrides)
    # 32x32 patches are below the 43 px receptive field on purpose.
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ExperimentConfig(**base)


def toy_dataset(n_scenes: int = 12, seed: int = 0) -> list:
    """Two-layer training scenes of the toy setup; other seeds give held-out sets."""
    return make_dataset(n_scenes, TOY_SCENES, seed=seed)


def toy_validation_scene(disparity: float = 2.0):
    """Single-layer noise scene for checking the estimated disparity."""
    return render_scene(single_layer_scene(disparity, spatial=(32, 32), texture="noise", seed=5,
                                           texture_scale=TOY_SCENES.texture_scale))


__all__ = [
    "AdamState", "TrainState", "TrainingDiverged", "TrainingExample", "adam_step", "evaluate",
    "TOY_SCENES", "load_model", "mean_psnr", "sample_patch", "toy_config", "toy_dataset", "toy_validation_scene",
    "train", "train_step"
]
