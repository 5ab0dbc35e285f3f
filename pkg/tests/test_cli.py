import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from lfasr.cli import build_parser, main, read_dataset
from lfasr.io import load_light_field, read_pfm, save_light_field
from lfasr.metrics import read_eval_summary, summary_row
from lfasr.train import evaluate, load_model


def tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


SYNTH = ["synth", "--scenes", "2", "--grid", "3x3", "--size", "16x16", "--disparity-range", "-2:2", "--seed", "3"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(SYNTH + ["--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def run(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = out / "cfg.json"
    cfg.write_text(json.dumps({"output_grid": [3, 3], "patch_size": 12, "depth_width": 4, "blend_width": 4,
                               "iterations": 2, "learning_rate": 1e-3}))
    assert main(["train", "--data", str(dataset), "--out", str(out), "--config", str(cfg)]) == 0
    return out


def test_synth_layout(dataset):
    scene = dataset / "scene_000"
    assert len(list((scene / "views").glob("view_*.png"))) == 9
    assert len(list((scene / "disparity").glob("*.pfm"))) == 9
    assert len(list((scene / "masks").glob("*.png"))) == 4 * 9
    spec = json.loads((scene / "spec.json").read_text())
    assert spec["grid"] == [3, 3] and len(spec["layers"]) == 2
    d = read_pfm(scene / "disparity" / "view_01_01.pfm")
    assert d.shape == (16, 16) and -2 <= d.min() and d.max() <= 2


def test_synth_summary_printed(tmp_path, capsys):
    assert main(SYNTH + ["--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "wrote 2 scenes" in out and "histogram" in out


def test_synth_is_deterministic(dataset, tmp_path):
    assert main(SYNTH + ["--out", str(tmp_path)]) == 0
    assert tree_hash(tmp_path) == tree_hash(dataset)


def test_dataset_reads_back(dataset):
    scenes = read_dataset(dataset)
    assert [s.name for s in scenes] == ["scene_000", "scene_001"]
    assert scenes[0].lf.angular_size == (3, 3)


@pytest.mark.parametrize("argv", [
    ["synth", "--scenes", "0", "--out", "x"],
    ["synth", "--grid", "3by3", "--out", "x"],
    ["synth", "--grid", "1x3", "--out", "x"],
    ["synth", "--size", "0x4", "--out", "x"],
    ["synth", "--disparity-range", "4:-4", "--out", "x"],
    ["synth", "--scenes", "2"],
    ["bogus"],
    [],
])
def test_usage_errors_exit_2(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2
    assert not (tmp_path / "x").exists()
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "usage"


def test_io_failure_exits_1(tmp_path, capsys):
    assert main(["eval", "--model", str(tmp_path / "none.ckpt"), "--data", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "io"


def test_help_lists_defaults(capsys):
    for cmd in ("synth", "train", "infer", "eval", "gradcheck", "plot"):
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([cmd, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        assert "default" in text


def test_train_outputs(run):
    assert (run / "model.ckpt").exists() and (run / "config.json").exists()
    rows = list(csv.DictReader(open(run / "train_log.csv")))
    assert [int(r["iteration"]) for r in rows] == [0, 1]
    assert json.loads((run / "model.json").read_text())["receptive_field"] == 43


def test_train_grid_mismatch_is_usage_error(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"output_grid": [7, 7], "patch_size": 12, "iterations": 1}))
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path / "r"), "--config", str(cfg)]) == 2


def test_train_twice_bit_identical(dataset, run, tmp_path):
    assert main(["train", "--data", str(dataset), "--out", str(tmp_path), "--config", str(run / "cfg.json")]) == 0
    assert (tmp_path / "model.ckpt").read_bytes() == (run / "model.ckpt").read_bytes()
    assert (tmp_path / "train_log.csv").read_bytes() == (run / "train_log.csv").read_bytes()


def test_infer_writes_nine_views_and_sidecar(dataset, run, tmp_path):
    lf = load_light_field(dataset / "scene_000" / "views")
    sparse = tmp_path / "sparse"
    save_light_field(lf.views[::2, ::2], sparse)
    out = tmp_path / "out"
    assert main(["infer", "--model", str(run / "model.ckpt"), "--input", str(sparse), "--out", str(out),
                 "--depth", "--dump-warps"]) == 0
    assert len(list(out.glob("view_*.png"))) == 9
    assert json.loads((out / "lightfield.json").read_text())["grid_size"] == [3, 3]
    assert len(list((out / "depth").glob("*.pfm"))) == 9
    assert len(list((out / "warps").iterdir())) == 4


def test_infer_rejects_non_corner_input(dataset, run, tmp_path):
    assert main(["infer", "--model", str(run / "model.ckpt"), "--input", str(dataset / "scene_000" / "views"),
                 "--out", str(tmp_path)]) == 2


def test_eval_summary_matches_evaluate(dataset, run, tmp_path, capsys):
    assert main(["eval", "--model", str(run / "model.ckpt"), "--data", str(dataset), "--out", str(tmp_path),
                 "--baseline", "warp-only"]) == 0
    summary = read_eval_summary(tmp_path / "eval.csv")
    scenes = read_dataset(dataset)
    ref = evaluate(load_model(run / "model.ckpt"), scenes, names=[s.name for s in scenes])
    for method, reports in ref.items():
        row = summary_row(reports, method)
        assert summary[method] == (row["psnr"], row["ssim"])
    assert "warp-only" in capsys.readouterr().out


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--tol", "1e-4"]) == 0
    assert "gradient checks passed" in capsys.readouterr().out


def test_gradcheck_fails_with_impossible_tolerance(capsys):
    assert main(["gradcheck", "--tol", "1e-14"]) == 1


def test_plot_writes_deterministic_svgs(run, dataset, tmp_path):
    assert main(["eval", "--model", str(run / "model.ckpt"), "--data", str(dataset), "--out", str(tmp_path)]) == 0
    pr = sorted(tmp_path.glob("pr_*.csv"))
    args = ["plot", "--log", str(run / "train_log.csv")] + [a for p in pr for a in ("--pr", str(p))]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("loss.svg", "pr.svg"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a.startswith(b"<?xml") and a == (tmp_path / "b" / name).read_bytes()


def test_plot_needs_inputs(tmp_path):
    assert main(["plot", "--out", str(tmp_path)]) == 2


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "lfasr", "synth", "--scenes", "0", "--out", "x"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert json.loads(r.stderr.strip().splitlines()[-1])["error"] == "usage"
