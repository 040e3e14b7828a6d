import json
import subprocess
import sys

import numpy as np
import pytest

from glod.cli import main
from glod.composer import box_mask
from glod.denoiser import load
from glod.denoiser.toy import denoising_loss, two_color_dataset
from glod.scene import load_scene, save_scene
from glod.scene.format import GlobalSpec, Scene


@pytest.fixture(scope="module")
def testset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ts")
    assert main(["testset", "--out", str(out), "--n", "10", "--seed", "1"]) == 0
    return out


def files(path):
    return sorted(p.relative_to(path).as_posix() for p in path.rglob("*") if p.is_file())


def test_testset_layout(testset):
    index = json.loads((testset / "testset.json").read_text())
    assert len(index["cases"]) == 10
    assert len(list(testset.glob("case_*/full.json"))) == 10
    assert len(list(testset.glob("case_*/decomposed.json"))) == 10
    sc = load_scene(testset / "case_0000" / "decomposed.json")
    assert len(sc.local_conditions) == 2


def run_sample(testset, out, *extra):
    case = testset / "case_0000"
    return main(
        ["sample", "--scene", str(case / "decomposed.json"), "--backend", str(case / "backend.glod"), "--out", str(out), "--steps", "20", *extra]
    )


def test_sample_four_seeds(testset, tmp_path):
    assert run_sample(testset, tmp_path / "run", "--seeds", "0,1,2,3") == 0
    run = tmp_path / "run"
    assert len(list(run.glob("image_seed*.ppm"))) == 4
    assert len(list(run.glob("trace_seed*.csv"))) == 4
    stub = (run / "metrics.csv").read_text().splitlines()
    assert len(stub) == 2 + 4 and stub[2].endswith(",,,,,,glod,0")
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seeds"] == [0, 1, 2, 3]
    assert manifest["sources"] == {"schedule": "flags", "step_rule": "flags", "seeds": "flags"}
    assert manifest["schedule"]["num_steps"] == 20
    # every artifact lives in the output directory
    assert all(p.parent == run for p in run.rglob("*"))


def test_sample_defaults_come_from_scene(testset, tmp_path):
    assert run_sample(testset, tmp_path / "r", "--num-seeds", "2") == 0
    sc = load_scene(testset / "case_0000" / "decomposed.json")
    manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert manifest["seeds"] == [sc.seed, sc.seed + 1] and manifest["sources"]["seeds"] == "scene"


def test_sample_is_byte_reproducible(testset, tmp_path):
    for name in ("a", "b"):
        assert run_sample(testset, tmp_path / name, "--seeds", "5,6", "--step-rule", "ddpm") == 0
    a, b = tmp_path / "a", tmp_path / "b"
    assert files(a) == files(b)
    for f in files(a):
        if f != "manifest.json":
            assert (a / f).read_bytes() == (b / f).read_bytes(), f


def test_locals_removed_differs_only_near_masks(testset, tmp_path):
    assert run_sample(testset, tmp_path / "g", "--seeds", "3", "--no-layout") == 0
    assert run_sample(testset, tmp_path / "r", "--seeds", "3", "--no-layout", "--method", "locals-removed") == 0
    g = np.load(tmp_path / "g" / "sample_seed3.npy")
    r = np.load(tmp_path / "r" / "sample_seed3.npy")
    sc = load_scene(testset / "case_0000" / "decomposed.json")
    H, W, _ = sc.image_size
    union = np.zeros((H, W))
    for lc in sc.local_conditions:
        union = np.maximum(union, box_mask(lc.box, H, W))
    outside = np.abs(g - r)[union == 0]
    inside = np.abs(g - r)[union == 1]
    assert np.mean(outside <= 1e-6) >= 0.95
    assert inside.max() > 0.1


def test_missing_scene_exit_2(tmp_path, capsys):
    assert main(["sample", "--scene", str(tmp_path / "no.json"), "--backend", "x", "--out", str(tmp_path / "o")]) == 2
    assert "not found" in capsys.readouterr().err


def test_bad_scene_exit_2(tmp_path, testset):
    (tmp_path / "bad.json").write_text("{")
    rc = main(["sample", "--scene", str(tmp_path / "bad.json"), "--backend", str(testset / "case_0000" / "backend.glod"), "--out", str(tmp_path / "o")])
    assert rc == 2


def test_divergence_exit_3(testset, tmp_path):
    sc = load_scene(testset / "case_0000" / "full.json")
    huge = Scene((GlobalSpec(sc.global_conditions[0].condition, 1e308),), (), sc.image_size, 0)
    save_scene(tmp_path / "huge.json", huge)
    rc = main(["sample", "--scene", str(tmp_path / "huge.json"), "--backend", str(testset / "case_0000" / "backend.glod"), "--out", str(tmp_path / "o"), "--no-layout"])
    assert rc == 3


def test_help_and_unknown_flags():
    assert subprocess.run([sys.executable, "-m", "glod", "--help"], capture_output=True).returncode == 0
    assert subprocess.run([sys.executable, "-m", "glod", "sample", "--help"], capture_output=True).returncode == 0
    r = subprocess.run([sys.executable, "-m", "glod", "testset", "--out", "x", "--frobnicate"], capture_output=True)
    assert r.returncode == 2


def test_score_is_deterministic(testset, tmp_path):
    images = tmp_path / "imgs"
    for case in ("case_0000", "case_0001"):
        c = testset / case
        assert main(["sample", "--scene", str(c / "decomposed.json"), "--backend", str(c / "backend.glod"), "--out", str(images / case), "--steps", "10", "--seeds", "0,1"]) == 0
    for name in ("a.csv", "b.csv"):
        assert main(["score", "--testset", str(testset), "--images", str(images), "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a.csv").read_bytes()
    assert a == (tmp_path / "b.csv").read_bytes()
    assert len(a.decode().splitlines()) == 2 + 4


def test_score_without_images_exit_2(testset, tmp_path):
    (tmp_path / "empty").mkdir()
    assert main(["score", "--testset", str(testset), "--images", str(tmp_path / "empty"), "--out", str(tmp_path / "m.csv")]) == 2


def test_train_round_trip(tmp_path):
    assert main(["train", "--out", str(tmp_path), "--iters", "200", "--n", "64"]) == 0
    d = load(tmp_path / "weights.glod")
    report = json.loads((tmp_path / "report.json").read_text())
    data = two_color_dataset(64)
    x0 = np.stack([data[i][0] for i in report["heldout_indices"]])
    conds = [data[i][1] for i in report["heldout_indices"]]
    assert abs(denoising_loss(d, x0, conds, seed=1) - report["heldout_mse"]) < 1e-9


def test_compose_demo(tmp_path, capsys):
    assert main(["compose-demo", "--out", str(tmp_path), "--steps", "20"]) == 0
    assert {"glod.ppm", "layout-only.ppm", "strip.ppm", "metrics.csv"} <= set(files(tmp_path))
    assert "glod" in capsys.readouterr().out
