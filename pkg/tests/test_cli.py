import json

import numpy as np
import pytest

from splatprior import io
from splatprior.cli import main
from splatprior.core import SplatMode, SplatScene
from splatprior.geomeval import TriangleMesh

PHOTOMETRIC_ONLY = {"priors": {"lambda_o": 0.0, "lambda_a": 0.0, "lambda_flat": 0.0}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if code == 0 else None), out, err


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("fixture") / "d"
    assert main(["gen-scene", "--out", str(d), "--seed", "0"]) == 0
    return d


def test_unknown_subcommand_is_invalid_input(capsys):
    code, _, _, err = run(capsys, "bogus")
    assert code == 1
    assert "usage" in err


def test_missing_required_argument(capsys):
    code, _, _, err = run(capsys, "render", "--scene", "x")
    assert code == 1 and "usage" in err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0


def test_bad_threads_and_missing_files(capsys, tmp_path):
    assert run(capsys, "eval-depth", "--pred", "a", "--gt", "b", "--threads", "0")[0] == 1
    assert run(capsys, "eval-depth", "--pred", tmp_path / "a.pfm", "--gt", tmp_path / "b.pfm")[0] == 1


def test_unknown_config_key(capsys, tmp_path):
    (tmp_path / "c.json").write_text('{"nonsense": 1}')
    code, _, _, err = run(capsys, "gradcheck", "--loss", "align", "--config", tmp_path / "c.json")
    assert code == 1 and "nonsense" in err


def test_gradcheck_orient(capsys):
    code, rep, _, _ = run(capsys, "gradcheck", "--loss", "orient", "--seed", "7")
    assert code == 0
    assert rep["schema"] == 1 and rep["passed"]
    assert rep["max_rel_error"] < 1e-4


def test_gen_scene_layout(data):
    for name in ("analytic.json", "cameras.json", "gt/scene.json", "init/scene.json",
                 "view_000.ppm", "view_001_depth.pfm"):
        assert (data / name).exists()
    assert len(io.read_cameras(data / "cameras.json")) == 2
    assert io.read_pfm(data / "view_000_depth.pfm").shape == (32, 32)


def test_fit_then_eval_pose_noiseless(capsys, data, tmp_path):
    cfg = tmp_path / "photo.json"
    cfg.write_text(json.dumps(PHOTOMETRIC_ONLY))
    out = tmp_path / "fit"
    code, rep, _, _ = run(capsys, "fit", "--data", data, "--init", "gt", "--targets", "rendered",
                          "--iterations", 5, "--config", cfg, "--out", out)
    assert code == 0
    assert rep["initial"]["synthesis"] == 0.0 and rep["final"]["synthesis"] == 0.0
    assert (out / "trace.csv").exists()
    code, rep, _, _ = run(capsys, "eval-pose", "--scene", out)
    assert code == 0
    # float32 storage of the splat means costs about 1e-6 degrees
    assert rep["auc"]["auc@5"] == pytest.approx(1.0, abs=1e-5)
    assert rep["pairs"][0]["rot_deg"] < 1e-5


def test_eval_pose_ransac_and_gt_cameras(capsys, data):
    code, rep, _, _ = run(capsys, "eval-pose", "--scene", data / "gt", "--method", "ransac",
                          "--gt-cameras", data / "cameras.json", "--thresholds", 1, 2)
    assert code == 0
    assert set(rep["auc"]) == {"auc@1", "auc@2"}
    assert rep["pairs"][0]["rot_deg"] < 1e-5


def test_eval_pose_without_poses(capsys, tmp_path, data):
    scene = io.load_scene(data / "gt")
    for f in scene.frames:
        f.gt_pose = None
    io.save_scene(scene, tmp_path / "s")
    assert run(capsys, "eval-pose", "--scene", tmp_path / "s")[0] == 1


def test_eval_depth_forced_case(capsys, tmp_path):
    gt = np.linspace(1.0, 4.0, 64).reshape(8, 8).astype(np.float32).astype(np.float64)
    io.write_pfm(tmp_path / "gt.pfm", gt)
    io.write_pfm(tmp_path / "pred.pfm", 1.2 * gt)
    code, rep, _, _ = run(capsys, "eval-depth", "--pred", tmp_path / "pred.pfm", "--gt", tmp_path / "gt.pfm")
    assert code == 0
    assert rep["abs_rel"] == pytest.approx(0.2, abs=1e-6)


def test_render_writes_views(capsys, data, tmp_path):
    code, rep, _, _ = run(capsys, "render", "--scene", data / "gt", "--cameras", data / "cameras.json",
                          "--out", tmp_path / "r")
    assert code == 0 and len(rep["views"]) == 2
    assert io.read_ppm(tmp_path / "r" / "render_000.ppm").shape == (32, 32, 3)
    # GT splats cover the whole image
    assert rep["views"][0]["coverage"] == 1.0


def test_fuse_and_eval_mesh(capsys, data, tmp_path):
    code, rep, _, _ = run(capsys, "fuse-mesh", "--scene", data / "gt", "--cameras", data / "cameras.json",
                          "--views", 4, "--out", tmp_path / "m.ply")
    assert code == 0 and rep["triangles"] > 0
    code, rep, _, _ = run(capsys, "eval-mesh", "--pred", tmp_path / "m.ply", "--gt-analytic", data / "analytic.json",
                          "--crop-cameras", data / "cameras.json")
    assert code == 0
    assert rep["chamfer"] < 0.1


def test_eval_mesh_against_itself(capsys, tmp_path):
    g = np.linspace(0, 1, 6)
    x, y = np.meshgrid(g, g)
    verts = np.stack([x.ravel(), y.ravel(), np.zeros(36)], 1)
    idx = np.arange(36).reshape(6, 6)
    tris = np.concatenate([np.stack([idx[:-1, :-1].ravel(), idx[1:, :-1].ravel(), idx[:-1, 1:].ravel()], 1),
                           np.stack([idx[1:, :-1].ravel(), idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()], 1)])
    io.write_mesh_ply(TriangleMesh(verts, tris), tmp_path / "p.ply")
    code, rep, _, _ = run(capsys, "eval-mesh", "--pred", tmp_path / "p.ply", "--gt", tmp_path / "p.ply")
    assert code == 0 and rep["chamfer"] < 0.02


def test_fuse_mesh_empty_scene_is_invalid_input(capsys, tmp_path, data):
    scene = io.load_scene(data / "gt")
    for f in scene.frames:
        f.opacities[:] = 0.0
    io.save_scene(SplatScene(scene.frames, SplatMode.THREE_DGS), tmp_path / "s")
    code, _, _, err = run(capsys, "fuse-mesh", "--scene", tmp_path / "s", "--cameras", data / "cameras.json",
                          "--views", 2, "--out", tmp_path / "m.ply")
    assert code == 1 and "error" in err


def test_seed_env_override(capsys, monkeypatch):
    monkeypatch.setenv("SPLATPRIOR_SEED", "3")
    _, rep, _, _ = run(capsys, "gradcheck", "--loss", "align")
    assert rep["seed"] == 3
    _, rep, _, _ = run(capsys, "gradcheck", "--loss", "align", "--seed", 5)
    assert rep["seed"] == 5


def test_reports_identical_across_threads(capsys, data, tmp_path):
    outs = []
    for n in (1, 8):
        code, _, text, _ = run(capsys, "render", "--scene", data / "init", "--cameras", data / "cameras.json",
                               "--out", tmp_path / f"r{n}", "--threads", n)
        assert code == 0
        outs.append(text)
    assert outs[0] == outs[1]
    assert (tmp_path / "r1" / "render_001_depth.pfm").read_bytes() == (tmp_path / "r8" / "render_001_depth.pfm").read_bytes()


def test_numerical_failure_exit_code(capsys, tmp_path, data):
    scene = io.load_scene(data / "init")
    scene.frames[0].means[0, 0] = np.nan
    io.save_scene(scene, tmp_path / "s")
    code, _, _, err = run(capsys, "fit", "--data", data, "--init", tmp_path / "s", "--iterations", 1,
                          "--out", tmp_path / "f")
    assert code == 2 and "numerical" in err
