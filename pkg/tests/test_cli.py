import csv
import json
import time

import numpy as np
import pytest
from PIL import Image

from texdown import scenes
from texdown.bake import build_uv_raster
from texdown.cli import EXIT_FORMAT, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, pose_grid
from texdown.io import write_png
from texdown.mesh import load_obj, normalize, write_obj
from texdown.render import PoseRange

SMALL_RUN = {"q_poses": 4, "validation_interval": 2, "render": {"resolution": 40},
             "model": {"c1": 16, "c2": 16, "encoder_channels": [8, 16, 16, 16], "graph_hidden": 16,
                       "warp_hidden": 8, "recon_hidden": 16}}


@pytest.fixture
def assets(tmp_path):
    (tmp_path / "cube.obj").write_bytes(write_obj(scenes.uv_cube()))
    (tmp_path / "square.obj").write_bytes(write_obj(scenes.two_face_square()))
    write_png(scenes.checkerboard(64, 64, 8), tmp_path / "checker.png")
    cfg = dict(SMALL_RUN, iterations=4, warmup=1)
    (tmp_path / "small.json").write_text(json.dumps(cfg))
    return tmp_path


def snapshot(path):
    return {p.name: p.read_bytes() for p in path.iterdir() if p.is_file()}


def test_scale_must_be_power_of_two(assets, capsys):
    code = main(["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--scale", "3", "--out", str(assets / "o")])
    assert code == EXIT_USAGE
    assert "power of two" in capsys.readouterr().err


def test_missing_inputs_are_format_errors(assets):
    base = ["--out", str(assets / "o")]
    assert main(["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "nope.png")]
                + base) == EXIT_FORMAT
    assert main(["render", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "nope.png"),
                 "--grid", "2x2", "--out", str(assets / "r")]) == EXIT_FORMAT
    (assets / "bad.obj").write_text("v 0 0 0\nf 1 2 3\n")
    assert main(["downsample", "--mesh", str(assets / "bad.obj"), "--texture", str(assets / "checker.png"),
                 "--variant", "bicubic"] + base) == EXIT_FORMAT
    assert not (assets / "o").exists()


def test_bicubic_downsample_is_fast(tmp_path):
    mesh = scenes.uv_sphere()
    (tmp_path / "s.obj").write_bytes(write_obj(mesh))
    write_png(scenes.checker_photo(512), tmp_path / "t.png")
    before = snapshot(tmp_path)
    start = time.perf_counter()
    code = main(["downsample", "--mesh", str(tmp_path / "s.obj"), "--texture", str(tmp_path / "t.png"),
                 "--scale", "4", "--variant", "bicubic", "--out", str(tmp_path / "out")])
    elapsed = time.perf_counter() - start
    assert code == EXIT_OK and elapsed < 10.0
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"texture_ds.png", "mesh_out.obj", "report.json"}
    assert Image.open(out / "texture_ds.png").size == (128, 128)
    assert snapshot(tmp_path) == before  # inputs untouched


def test_learned_downsample_is_reproducible(assets):
    args = ["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
            "--variant", "full", "--profile", "desk", "--seed", "7", "--config", str(assets / "small.json")]
    assert main(args + ["--out", str(assets / "a")]) == EXIT_OK
    assert main(args + ["--out", str(assets / "b")]) == EXIT_OK
    for name in ("report.json", "texture_ds.png", "mesh_out.obj", "checkpoint.bin"):
        assert (assets / "a" / name).read_bytes() == (assets / "b" / name).read_bytes()
    rep = json.loads((assets / "a" / "report.json").read_text())
    assert rep["seed"] == 7 and rep["config"]["iterations"] == 4 and rep["profile"] == "desk"


def test_config_file_overrides_flags(assets):
    cfg = dict(SMALL_RUN, iterations=3, warmup=1, seed=11, scale=2, variant="base")
    (assets / "c.json").write_text(json.dumps(cfg))
    code = main(["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--scale", "4", "--seed", "1", "--config", str(assets / "c.json"), "--out", str(assets / "o")])
    assert code == EXIT_OK
    rep = json.loads((assets / "o" / "report.json").read_text())
    assert (rep["seed"], rep["scale"], rep["variant"], rep["config"]["iterations"]) == (11, 2, "base", 3)
    (assets / "bad.json").write_text(json.dumps({"learning_speed": 3}))
    assert main(["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--config", str(assets / "bad.json"), "--out", str(assets / "o2")]) == EXIT_USAGE


def test_profile_from_environment(assets, monkeypatch):
    monkeypatch.setenv("GEOSCALER_PROFILE", "paper")
    cfg = dict(SMALL_RUN, iterations=2, warmup=1)
    (assets / "c.json").write_text(json.dumps(cfg))
    args = ["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
            "--variant", "base", "--config", str(assets / "c.json")]
    assert main(args + ["--out", str(assets / "env")]) == EXIT_OK
    assert json.loads((assets / "env" / "report.json").read_text())["profile"] == "paper"
    assert main(args + ["--profile", "desk", "--out", str(assets / "flag")]) == EXIT_OK
    assert json.loads((assets / "flag" / "report.json").read_text())["profile"] == "desk"
    monkeypatch.setenv("GEOSCALER_PROFILE", "cluster")
    assert main(args + ["--out", str(assets / "bad")]) == EXIT_USAGE


def test_numeric_abort_exit_code(assets, monkeypatch):
    from texdown import trainer

    def nan_loss(pairs, weights, spec=None):
        return sum(((a - b) ** 2).mean() for a, b in pairs) * float("nan")

    monkeypatch.setattr(trainer, "render_loss", nan_loss)
    code = main(["downsample", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--config", str(assets / "small.json"), "--out", str(assets / "o")])
    assert code == EXIT_NUMERIC
    diag = json.loads((assets / "o" / "abort.json").read_text())
    assert diag["iteration"] == 1 and len(diag["poses"]) == 4


def test_eval_tables(assets, capsys):
    common = ["--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
              "--config", str(assets / "small.json")]
    assert main(["baseline", *common, "--kernel", "bicubic", "--out", str(assets / "bic")]) == EXIT_OK
    assert main(["baseline", *common, "--kernel", "lanczos", "--out", str(assets / "lan")]) == EXIT_OK
    assert main(["eval", str(assets / "bic"), str(assets / "bic" / "report.json"), "--out",
                 str(assets / "self")]) == EXIT_OK
    rows = list(csv.DictReader((assets / "self" / "comparison.csv").open()))
    assert len(rows) == 2
    assert all(float(r["delta_psnr"]) == 0 and float(r["delta_ssim"]) == 0 for r in rows)
    assert float(rows[0]["memory_ratio"]) == pytest.approx(1 / 16)
    assert (assets / "self" / "comparison.txt").read_text().startswith("variant")

    assert main(["eval", str(assets / "bic"), str(assets / "lan"), "--out", str(assets / "cmp")]) == EXIT_OK
    rows = list(csv.DictReader((assets / "cmp" / "comparison.csv").open()))
    assert [r["variant"] for r in rows] == ["bicubic", "lanczos"]

    (assets / "q.json").write_text(json.dumps(dict(SMALL_RUN, q_poses=6)))
    assert main(["baseline", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--config", str(assets / "q.json"), "--out", str(assets / "q6")]) == EXIT_OK
    capsys.readouterr()
    assert main(["eval", str(assets / "bic"), str(assets / "q6")]) == EXIT_USAGE
    assert "pose hash" in capsys.readouterr().err

    assert main(["report", str(assets / "bic"), "--history"]) == EXIT_OK
    assert "bicubic x4" in capsys.readouterr().out


def test_bake_planar_square(assets, capsys):
    out = assets / "bake"
    assert main(["bake", "--mesh", str(assets / "square.obj"), "--size", "16", "--out", str(out)]) == EXIT_OK
    printed = capsys.readouterr().out
    normals = np.asarray(Image.open(out / "normals.png"))
    mask = np.asarray(Image.open(out / "mask.png"))[..., 0] > 0
    assert mask.all()
    assert (normals == normals[0, 0]).all()
    assert normals[0, 0].tolist() == [128, 128, 255]
    raster = build_uv_raster(normalize(load_obj(assets / "square.obj")), (16, 16))
    assert f"{raster.covered_fraction:.6f}" in printed and "256/256" in printed


def test_bake_uncovered_texels_are_black(assets, capsys):
    out = assets / "bake"
    assert main(["bake", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
                 "--out", str(out)]) == EXIT_OK
    mask = np.asarray(Image.open(out / "mask.png"))[..., 0] > 0
    assert 0 < mask.mean() < 1
    for name in ("positions.png", "normals.png", "mask.png"):
        assert not np.asarray(Image.open(out / name))[~mask].any()
    covered = int(mask.sum())
    assert f"({covered}/4096 texels)" in capsys.readouterr().out


def test_render_grid(assets):
    args = ["render", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
            "--grid", "3x3", "--resolution", "32"]
    assert main(args + ["--out", str(assets / "r1")]) == EXIT_OK
    assert main(args + ["--out", str(assets / "r2")]) == EXIT_OK
    pngs = sorted(p.name for p in (assets / "r1").glob("*.png"))
    assert len(pngs) == 9
    assert snapshot(assets / "r1") == snapshot(assets / "r2")
    poses = json.loads((assets / "r1" / "view_poses.json").read_text())
    assert len({(p["azimuth"], p["elevation"]) for p in poses}) == 9
    single = ["render", "--mesh", str(assets / "cube.obj"), "--texture", str(assets / "checker.png"),
              "--azimuth", "30", "--elevation", "10", "--resolution", "32", "--out", str(assets / "r3")]
    assert main(single) == EXIT_OK and len(list((assets / "r3").glob("*.png"))) == 1


def test_pose_grid_covers_lattice():
    pr = PoseRange()
    poses = pose_grid(pr, 3, 2)
    assert len(poses) == 6
    assert sorted({p.azimuth for p in poses}) == [60.0, 180.0, 300.0]
    assert sorted({p.elevation for p in poses}) == [-7.5, 37.5]
    assert all(pr.contains(p) for p in poses)


def test_unknown_subcommand_is_usage_error():
    assert main(["frobnicate"]) == EXIT_USAGE
