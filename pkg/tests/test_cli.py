import json
import os
import subprocess
import sys

import numpy as np

from volmc import acceptance, cli, imageio, presets
from volmc.acceptance import Context, check_cv_unbiased
from volmc.estimator import CSV_HEADER
from volmc.optimize import INVERT_CSV_HEADER

SMALL = ["--width", "6", "--height", "5", "--n", "16", "--m", "2", "--m-fast", "4", "--n-sec", "8"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_usage_errors(tmp_path):
    assert run() == cli.EXIT_USAGE
    assert run("bogus") == cli.EXIT_USAGE
    assert run("render", "vacuum", "--spp", "0", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("render", "vacuum", "--mode", "cv", "--out", tmp_path) == cli.EXIT_USAGE
    assert run("selftest", "--only", "99") == cli.EXIT_USAGE
    assert run("--help") == cli.EXIT_OK


def test_data_errors(tmp_path, capsys):
    assert run("render", tmp_path / "missing.json", "--out", tmp_path) == cli.EXIT_DATA
    bad = tmp_path / "bad.json"
    bad.write_text('{"density": {"type": "homogeneous-box"')
    assert run("render", bad, "--out", tmp_path) == cli.EXIT_DATA
    assert "bad.json" in capsys.readouterr().err
    d = presets.two_blob().to_json()
    d["emitters"][0]["kind"] = "laser"
    sc = tmp_path / "s.json"
    sc.write_text(json.dumps(d))
    assert run("render", sc, "--out", tmp_path) == cli.EXIT_DATA
    assert "emitters[0].kind" in capsys.readouterr().err
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"nope")
    assert run("render", "vacuum", "--cache", junk, "--out", tmp_path) == cli.EXIT_DATA


def test_numeric_failure(tmp_path):
    assert run("fit-cache", "two-blob", "--steps", "20", "--batch", "64", "--lr", "1e300", "--out", tmp_path) == cli.EXIT_NUMERIC


def test_render_writes_formats(tmp_path):
    assert run("render", "vacuum", "--spp", "1", "--out", tmp_path, *SMALL) == cli.EXIT_OK
    raw = (tmp_path / "render.pfm").read_bytes()
    assert raw.startswith(b"PF\n6 5\n-1.0\n")
    data = np.frombuffer(raw[len(b"PF\n6 5\n-1.0\n"):], dtype="<f4")
    assert data.size == 6 * 5 * 3 and np.all(data == 0.5)
    ppm = (tmp_path / "render.ppm").read_bytes()
    assert ppm.startswith(b"P6\n6 5\n255\n")
    expected = round(255 * (0.5 / 1.5) ** (1 / 2.2))
    assert set(ppm[len(b"P6\n6 5\n255\n"):]) == {expected}


def test_pfm_orientation(tmp_path):
    img = np.zeros((2, 3, 3))
    img[0, 0] = [1.0, 2.0, 3.0]  # top-left
    p = tmp_path / "x.pfm"
    imageio.write_pfm(p, img)
    data = np.frombuffer(p.read_bytes()[len(b"PF\n3 2\n-1.0\n"):], dtype="<f4").reshape(2, 3, 3)
    # bottom-up storage puts the top row last
    np.testing.assert_array_equal(data[1, 0], [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(imageio.read_pfm(p), img)


def test_fit_and_cv_render_pipeline(tmp_path):
    assert run("fit-vmf", "two-blob", "--steps", "3", "--res", "2", "--lobes", "4", "--batch", "16", "--out", tmp_path, *SMALL) == 0
    assert run("fit-cache", "two-blob", "--steps", "3", "--batch", "32", "--n-sec", "8", "--out", tmp_path) == 0
    field = json.loads((tmp_path / "vmf.json").read_text())
    assert field["lobes"] == 4 and field["resolution"] == [2, 2, 2]
    assert (tmp_path / "cache.bin").read_bytes()[:8] == b"VMCFAST1"
    assert (tmp_path / "vmf_loss.csv").read_text().splitlines()[0] == "step,loss"
    code = run("render", "two-blob", "--vmf", tmp_path / "vmf.json", "--cache", tmp_path / "cache.bin", "--spp", "1", "--out", tmp_path, *SMALL)
    assert code == 0
    assert imageio.read_pfm(tmp_path / "render.pfm").shape == (5, 6, 3)


def test_variance_csv(tmp_path):
    code = run(
        "variance", "two-blob", "--pixels", "3", "--trials", "3", "--fit-steps", "2", "--cache-steps", "2", "--out", tmp_path, *SMALL
    )
    assert code == 0
    lines = (tmp_path / "variance.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 3 * 3
    assert {r.split(",")[0] for r in lines[1:]} == {"neither", "vmf", "vmf+cache"}
    assert {r.split(",")[1] for r in lines[1:]} == {"2"}


def test_invert_outputs(tmp_path):
    code = run(
        "invert", "sphere", "--views", "2", "--size", "6", "--target-spp", "1", "--steps", "3", "--batch", "16",
        "--cache-steps", "2", "--render-every", "2", "--out", tmp_path, "--n", "16", "--m", "2", "--m-fast", "4",
    )
    assert code == 0
    lines = (tmp_path / "invert.csv").read_text().splitlines()
    assert lines[0] == INVERT_CSV_HEADER and len(lines) == 4
    mat = json.loads((tmp_path / "material.json").read_text())
    assert set(mat) >= {"m", "r", "a"}
    assert sorted(p.name for p in tmp_path.glob("step_*.ppm"))


def test_selftest_exit_codes(monkeypatch, capsys):
    assert run("selftest", "--only", "8") == cli.EXIT_OK
    assert "PASS criterion  8" in capsys.readouterr().out
    monkeypatch.setitem(acceptance.CRITERIA, 1, ("quadrature", lambda ctx: (False, "forced")))
    assert run("selftest", "--only", "1") == cli.EXIT_ACCEPT
    assert "FAIL criterion  1" in capsys.readouterr().out


def test_broken_control_variate_is_caught(monkeypatch, tmp_path):
    # dropping the correction term leaves the untrained cache's bias in place
    monkeypatch.setenv("VOLMC_BREAK_CV", "1")
    ok, detail = check_cv_unbiased(Context(0, tmp_path), trials=20_000)
    assert not ok, detail


def test_module_entry_point_without_numba(tmp_path):
    env = dict(os.environ, VOLMC_NUMBA="0")
    code = "from volmc import kernels; assert kernels.BACKEND == 'numpy'; import sys; from volmc.cli import main; sys.exit(main(sys.argv[1:]))"
    out = subprocess.run(
        [sys.executable, "-c", code, "render", "vacuum", "--spp", "1", "--out", str(tmp_path), *SMALL],
        env=env, capture_output=True, text=True, timeout=300,
    )
    assert out.returncode == 0, out.stderr
    img = imageio.read_pfm(tmp_path / "render.pfm")
    assert np.all(img == 0.5)
    help_out = subprocess.run([sys.executable, "-m", "volmc", "--help"], capture_output=True, text=True, timeout=120)
    assert help_out.returncode == 0 and "selftest" in help_out.stdout
