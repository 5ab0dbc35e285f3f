"""``lfasr`` command line: synth, train, infer, eval, gradcheck, plot.

Exit codes: 0 success, 1 runtime failure (I/O, divergence, failed checks),
2 usage error. Failures also print one JSON line to stderr.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DepthField, LightField, SparseLightField, corner_positions
from .io import (ExperimentConfig, LightFieldIOError, PFMError, load_config, load_light_field, read_pfm,
                 save_config, save_light_field, save_mask, write_pfm)

log = logging.getLogger("lfasr")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# -- flag parsing -----------------------------------------------------------------------------

def _pair(text: str, sep: str, kind, what: str):
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"{what} must look like A{sep}B, got {text!r}")
    try:
        return kind(parts[0]), kind(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: cannot parse {text!r}") from None


def grid_arg(text):
    m, n = _pair(text.lower(), "x", int, "grid")
    if m < 2 or n < 2:
        raise argparse.ArgumentTypeError(f"grid must be at least 2x2, got {text!r}")
    return m, n


def size_arg(text):
    h, w = _pair(text.lower(), "x", int, "size")
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def range_arg(text):
    lo, hi = _pair(text, ":", float, "disparity range")
    if not lo <= hi:
        raise argparse.ArgumentTypeError(f"disparity range needs a <= b, got {text!r}")
    return lo, hi


def positive_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def nonneg_int(text):
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if n < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {n}")
    return n


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        _emit_error("usage", message)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="lfasr", description="Light-field angular super-resolution from four corner views.",
                formatter_class=fmt)
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="render a synthetic layered-scene dataset", formatter_class=fmt)
    s.add_argument("--scenes", type=int, default=12, help="number of scenes (>= 1)")
    s.add_argument("--grid", type=grid_arg, default=(3, 3), help="angular grid MxN")
    s.add_argument("--size", type=size_arg, default=(48, 48), help="view size HxW")
    s.add_argument("--disparity-range", type=range_arg, default=(-4.0, 4.0), help="layer disparities a:b")
    s.add_argument("--layers", type=positive_int, default=2, help="layers per scene")
    s.add_argument("--texture-scale", type=float, default=1.0, help="texture feature size multiplier")
    s.add_argument("--channels", type=int, choices=[1, 3], default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", type=Path, required=True, help="output dataset directory")

    t = sub.add_parser("train", help="train a model on a dataset directory", formatter_class=fmt)
    t.add_argument("--data", type=Path, required=True, help="dataset directory written by synth")
    t.add_argument("--out", type=Path, required=True, help="run directory for logs and checkpoints")
    t.add_argument("--config", type=Path, default=None, help="experiment config JSON")
    t.add_argument("--toy", action="store_true", help="start from the desk-scale toy config")
    t.add_argument("--iterations", type=nonneg_int, default=None, help="override config iterations")
    t.add_argument("--seed", type=int, default=None, help="override config seed")
    t.add_argument("--checkpoint-every", type=nonneg_int, default=None, help="override checkpoint interval")
    t.add_argument("--blend-mode", choices=["light-field", "view"], default=None, help="override blend mode")
    t.add_argument("--resume", action="store_true", help="continue from OUT/model.ckpt")

    i = sub.add_parser("infer", help="reconstruct a dense light field from four corner views", formatter_class=fmt)
    i.add_argument("--model", type=Path, required=True, help="checkpoint file")
    i.add_argument("--input", type=Path, required=True, help="2x2 view-grid folder of corner views")
    i.add_argument("--out", type=Path, required=True, help="output view-grid folder")
    i.add_argument("--depth", action="store_true", help="also write per-view disparity PFMs")
    i.add_argument("--dump-warps", action="store_true", help="also write the warped views per source")

    e = sub.add_parser("eval", help="evaluate a model on a dataset directory", formatter_class=fmt)
    e.add_argument("--model", type=Path, required=True, help="checkpoint file")
    e.add_argument("--data", type=Path, required=True, help="dataset directory")
    e.add_argument("--out", type=Path, required=True, help="directory for CSV reports")
    e.add_argument("--baseline", choices=["warp-only", "none"], default="warp-only")
    e.add_argument("--view-blend-model", type=Path, default=None, help="checkpoint of a view-blending model")
    e.add_argument("--no-pr", action="store_true", help="skip parallax PR curves")

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients", formatter_class=fmt)
    g.add_argument("--tol", type=float, default=1e-4, help="tolerance for kinked cases (smooth: tol/100)")
    g.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="render loss and PR curves to SVG", formatter_class=fmt)
    pl.add_argument("--log", type=Path, action="append", default=[], help="train_log.csv (repeatable)")
    pl.add_argument("--pr", type=Path, action="append", default=[], help="pr_*.csv (repeatable)")
    pl.add_argument("--out", type=Path, required=True, help="output directory")
    return p


def _emit_error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": str(message)}), file=sys.stderr)


# -- dataset directories ------------------------------------------------------------------------

@dataclass
class Scene:
    """A dataset scene as read back from disk."""

    name: str
    lf: LightField
    depth: DepthField


def _view_name(u, v, ext):
    return f"view_{u:02d}_{v:02d}.{ext}"


def write_scene(bundle, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    save_light_field(bundle.lf, directory / "views")
    (directory / "disparity").mkdir(exist_ok=True)
    (directory / "masks").mkdir(exist_ok=True)
    M, N = bundle.lf.angular_size
    for u in range(M):
        for v in range(N):
            write_pfm(directory / "disparity" / _view_name(u, v, "pfm"), bundle.depth.disparity[u, v])
            for k, (su, sv) in enumerate(bundle.sources):
                save_mask(bundle.occlusion[k, u, v], directory / "masks" / f"occlusion_{su:02d}_{sv:02d}_to_{u:02d}_{v:02d}.png")
    (directory / "spec.json").write_text(json.dumps(bundle.spec.to_dict(), indent=1, sort_keys=True) + "\n")


def read_scene(directory: Path) -> Scene:
    lf = load_light_field(directory / "views")
    M, N = lf.angular_size
    disp_dir = directory / "disparity"
    if disp_dir.is_dir():
        disp = np.stack([np.stack([read_pfm(disp_dir / _view_name(u, v, "pfm")) for v in range(N)]) for u in range(M)])
    else:
        disp = np.zeros((M, N) + lf.spatial_size)
    return Scene(directory.name, lf, DepthField(disp.astype(np.float64)))


def read_dataset(directory: Path) -> list[Scene]:
    if not directory.is_dir():
        raise LightFieldIOError(f"dataset directory not found: {directory}")
    dirs = sorted(d for d in directory.iterdir() if (d / "views").is_dir())
    if not dirs:
        raise LightFieldIOError(f"{directory}: no scene folders with a views/ subfolder")
    return [read_scene(d) for d in dirs]


# -- subcommands --------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    from .synth import SceneDistribution, make_dataset

    if args.scenes < 1:
        raise UsageError("--scenes must be >= 1")
    dist = SceneDistribution(grid=args.grid, spatial=args.size, disparity_range=args.disparity_range,
                             n_layers=args.layers, channels=args.channels, texture_scale=args.texture_scale)
    bundles = make_dataset(args.scenes, dist, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    for idx, b in enumerate(bundles):
        write_scene(b, args.out / f"scene_{idx:03d}")
    meta = {"scenes": args.scenes, "grid": list(args.grid), "size": list(args.size),
            "disparity_range": list(args.disparity_range), "layers": args.layers, "seed": args.seed,
            "texture_scale": args.texture_scale, "channels": args.channels}
    (args.out / "dataset.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    ds = np.array([l.disparity for b in bundles for l in b.spec.layers])
    counts, edges = np.histogram(ds, bins=min(8, max(1, ds.size)), range=args.disparity_range)
    print(f"wrote {len(bundles)} scenes ({args.grid[0]}x{args.grid[1]} views of {args.size[0]}x{args.size[1]}) to {args.out}")
    print("layer disparity histogram:")
    for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
        print(f"  [{lo:+.2f}, {hi:+.2f}) {c:3d} {'#' * int(c)}")
    return EXIT_OK


def _train_config(args) -> ExperimentConfig:
    from .train import toy_config

    if args.config is not None:
        cfg = load_config(args.config)
    elif args.toy:
        cfg = toy_config()
    else:
        cfg = ExperimentConfig()
    d = cfg.to_dict()
    for flag, key in (("iterations", "iterations"), ("seed", "seed"), ("checkpoint_every", "checkpoint_every"),
                      ("blend_mode", "blend_mode")):
        if getattr(args, flag) is not None:
            d[key] = getattr(args, flag)
    return ExperimentConfig.from_dict(d)


def cmd_train(args) -> int:
    from .train import TrainState, train

    try:
        cfg = _train_config(args)
    except (ValueError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad config: {exc}") from exc
    data = read_dataset(args.data)
    grid = data[0].lf.angular_size
    if tuple(cfg.output_grid) != grid:
        raise UsageError(f"config output_grid {tuple(cfg.output_grid)} does not match dataset grid {grid}")
    state = None
    if args.resume:
        ckpt = args.out / "model.ckpt"
        if not ckpt.exists():
            raise LightFieldIOError(f"--resume given but {ckpt} does not exist")
        state = TrainState.load(ckpt)
        state.config = cfg
    args.out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, args.out / "config.json")

    def progress(st):
        if st.iteration % 50 == 0 or st.iteration == cfg.iterations:
            h = st.history[-1]
            print(f"iter {st.iteration:6d}  total {h['total']:.5f}  l_d {h['l_d']:.5f}  l_b {h['l_b']:.5f}  "
                  f"l_e {h['l_e']:.5f}", flush=True)

    state = train(cfg, data, args.out, state=state, progress=progress)
    (args.out / "model.json").write_text(json.dumps(state.model.describe(), indent=2, sort_keys=True) + "\n")
    print(f"finished at iteration {state.iteration}; checkpoint {args.out / 'model.ckpt'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .model import super_resolve
    from .train import load_model

    model = load_model(args.model)
    sparse_lf = load_light_field(args.input)
    if sparse_lf.angular_size != (2, 2):
        raise UsageError(f"--input must be a 2x2 grid of corner views, got {sparse_lf.angular_size}")
    M, N = model.cfg.grid
    views = np.stack([sparse_lf.views[0, 0], sparse_lf.views[0, 1], sparse_lf.views[1, 0], sparse_lf.views[1, 1]])
    corners = corner_positions(M, N)
    sparse = SparseLightField(views, corners, (M, N))
    lf, depth, warps = super_resolve(sparse, model)
    save_light_field(lf, args.out)
    if args.depth:
        (args.out / "depth").mkdir(exist_ok=True)
        for u in range(M):
            for v in range(N):
                write_pfm(args.out / "depth" / _view_name(u, v, "pfm"), depth.disparity[u, v])
    if args.dump_warps:
        for k, (su, sv) in enumerate(warps.source_positions):
            save_light_field(np.clip(warps.array[k], 0.0, 1.0), args.out / "warps" / f"source_{su:02d}_{sv:02d}")
    print(f"wrote {M * N} views to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import average_pr, summary_row, write_eval_csv, write_pr_csv
    from .train import evaluate, load_model

    model = load_model(args.model)
    vb = load_model(args.view_blend_model) if args.view_blend_model is not None else None
    data = read_dataset(args.data)
    if data[0].lf.angular_size != model.cfg.grid:
        raise UsageError(f"model grid {model.cfg.grid} does not match dataset grid {data[0].lf.angular_size}")
    results = evaluate(model, data, view_blend_model=vb, warp_only=args.baseline == "warp-only",
                       names=[s.name for s in data], with_pr=not args.no_pr)
    args.out.mkdir(parents=True, exist_ok=True)
    reports = [r for rs in results.values() for r in rs]
    write_eval_csv(reports, args.out / "eval.csv")
    for method, rs in results.items():
        row = summary_row(rs, method)
        print(f"{method:18s} PSNR {row['psnr']:.3f} dB  SSIM {row['ssim']:.4f}  ({len(rs)} scenes, novel views)")
        curves = [r.pr for r in rs if r.pr is not None]
        if curves:
            write_pr_csv(average_pr(curves), args.out / f"pr_{method}.csv", method)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    if not args.tol > 0:
        raise UsageError("--tol must be positive")

    def show(c):
        extra = f"  (skipped {c.skipped}/{c.probed} kink probes)" if c.skipped else ""
        print(f"{'ok  ' if c.passed else 'FAIL'} {c.name:20s} rel.err {c.error:.2e}  tol {c.tol:.0e}  "
              f"{c.seconds:.1f}s{extra}", flush=True)

    results = run_suite(args.tol, args.seed, progress=show)
    failed = [c.name for c in results if not c.passed]
    print(f"{len(results) - len(failed)}/{len(results)} gradient checks passed")
    if failed:
        _emit_error("gradcheck", f"failed: {', '.join(failed)}")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    if not args.log and not args.pr:
        raise UsageError("give at least one --log or --pr file")
    # Fixed hash salt keeps the SVG byte-identical across runs.
    plt.rcParams["svg.hashsalt"] = "lfasr"
    plt.rcParams["svg.fonttype"] = "none"
    args.out.mkdir(parents=True, exist_ok=True)
    written = []
    if args.log:
        fig, ax = plt.subplots(figsize=(6, 4))
        for path in args.log:
            rows = list(csv.DictReader(open(path, newline="")))
            if not rows:
                raise LightFieldIOError(f"{path}: empty training log")
            it = [int(r["iteration"]) for r in rows]
            for key in ("total", "l_d", "l_b", "l_e"):
                ax.plot(it, [float(r[key]) for r in rows], label=f"{path.parent.name}:{key}", linewidth=1)
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(args.out / "loss.svg", metadata={"Date": None})
        plt.close(fig)
        written.append("loss.svg")
    if args.pr:
        fig, ax = plt.subplots(figsize=(5, 5))
        for path in args.pr:
            rows = list(csv.DictReader(open(path, newline="")))
            if not rows:
                raise LightFieldIOError(f"{path}: empty PR file")
            ax.plot([float(r["recall"]) for r in rows], [float(r["precision"]) for r in rows], marker="o",
                    markersize=3, label=rows[0]["method"] or path.stem)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(args.out / "pr.svg", metadata={"Date": None})
        plt.close(fig)
        written.append("pr.svg")
    print("wrote " + ", ".join(str(args.out / w) for w in written))
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "plot": cmd_plot}


def _join_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "-4:4" as an option, so bind range values to their flag.
    out = []
    it = iter(argv)
    for a in it:
        if a == "--disparity-range":
            nxt = next(it, None)
            out.append(a if nxt is None else f"{a}={nxt}")
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    from .train import TrainingDiverged

    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        _emit_error("usage", exc)
        return EXIT_USAGE
    except (LightFieldIOError, PFMError, OSError) as exc:
        _emit_error("io", exc)
        return EXIT_RUNTIME
    except TrainingDiverged as exc:
        _emit_error("diverged", exc)
        return EXIT_RUNTIME
    except (ValueError, KeyError) as exc:
        _emit_error("runtime", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
