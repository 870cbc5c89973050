import numpy as np
import pytest
from PIL import Image

from voxelfield.cli import run
from voxelfield.fixtures import write_all
from voxelfield.world import load_world


@pytest.fixture(scope="module")
def worlds(tmp_path_factory):
    d = tmp_path_factory.mktemp("worlds")
    write_all(d)
    return d


@pytest.fixture(scope="module")
def checkpoint(worlds, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert run(["train", str(worlds / "train8.gvox"), "--out", str(out), "--iterations", "2",
                "--set", "train_res=8", "--set", "samples_train=8", "--quiet"]) == 0
    return out / "checkpoint.vfc"


def test_preprocess(worlds, tmp_path, capsys):
    out = tmp_path / "shell.gvox"
    assert run(["preprocess", str(worlds / "terrain32.gvox"), str(out)]) == 0
    assert "occupancy before=" in capsys.readouterr().out
    assert load_world(out).K < load_world(worlds / "terrain32.gvox").K


def test_train_outputs(checkpoint, capsys):
    run_dir = checkpoint.parent
    lines = (run_dir / "metrics.log").read_text().splitlines()
    assert len(lines) == 2
    record = dict(kv.split("=") for kv in lines[0].split())
    for key in ("iteration", "total", "l2", "l1", "opacity", "mean_t_end"):
        assert key in record


def test_render(worlds, checkpoint, tmp_path):
    prefix = tmp_path / "frame"
    assert run(["render", str(worlds / "train8.gvox"), str(checkpoint), "--eye", "0,10,0",
                "--lookat", "8,4,8", "--res", "12x10", "--samples", "32", "--out", str(prefix)]) == 0
    rgb = np.asarray(Image.open(f"{prefix}_rgb.png"))
    assert rgb.shape == (10, 12, 3)
    assert np.asarray(Image.open(f"{prefix}_depth.png")).shape == (10, 12)
    assert Image.open(f"{prefix}_seg.png").mode == "P"


def test_render_bypass(worlds, checkpoint, tmp_path):
    prefix = tmp_path / "plain"
    assert run(["render", str(worlds / "train8.gvox"), str(checkpoint), "--eye", "0,10,0",
                "--lookat", "8,4,8", "--res", "8x8", "--no-refiner", "--out", str(prefix)]) == 0
    assert np.asarray(Image.open(f"{prefix}_rgb.png")).shape == (8, 8, 3)


def test_render_wrong_world(worlds, checkpoint, capsys):
    code = run(["render", str(worlds / "terrain32.gvox"), str(checkpoint), "--eye", "0,10,0",
                "--lookat", "8,4,8"])
    err = capsys.readouterr().err.strip()
    assert code == 1 and len(err.splitlines()) == 1 and "error" in err


def test_project(worlds, tmp_path, capsys):
    assert run(["project", str(worlds / "train8.gvox"), "--eye", "0,6,0", "--lookat", "6,1,6",
                "--res", "16x16", "--out", str(tmp_path / "p")]) == 0
    assert "entropy=" in capsys.readouterr().out
    assert (tmp_path / "p_seg.png").exists()


def test_bench(capsys):
    assert run(["bench", "traverse", "--rays", "300"]) == 0
    out = capsys.readouterr().out
    assert "rays_per_second=" in out and "oracle_mismatches=0" in out


def test_gradcheck(worlds, capsys):
    assert run(["gradcheck", "--world", str(worlds / "tiny.gvox"), "--per-tensor", "2"]) == 0
    out = capsys.readouterr().out
    for group in ("features", "field", "sky", "style", "refiner"):
        assert group in out
    assert "PASS" in out


def test_missing_file(capsys):
    assert run(["preprocess", "nope.gvox", "out.gvox"]) == 1
    assert capsys.readouterr().err.count("\n") == 1


@pytest.mark.parametrize("argv", [["bogus"], ["render", "w", "c"], ["train", "w"],
                                  ["project", "w", "--eye", "1,2", "--lookat", "0,0,0"],
                                  ["--frobnicate"]])
def test_usage_errors_exit_2(argv):
    with pytest.raises(SystemExit) as err:
        run(argv)
    assert err.value.code == 2
