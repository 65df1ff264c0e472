import json

import numpy as np
import pytest

from acfusion.cli import EXIT_CONTRACT, EXIT_INPUT, EXIT_OK, EXIT_USAGE, run
from acfusion.spectral import load_autocorr
from acfusion.volume import load_volume, read_pgm16

SMALL = ["--dims", "24", "--count", "2", "--sigma", "1,1,1", "--shift-max", "1", "--seed", "3"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    codes = [
        run(["simulate", *SMALL, "--out", str(root / "sim")]),
        run(["fuse", "--views", str(root / "sim"), "--baseline", "--out", str(root / "fused"), "--threads", "1"]),
        run(["reconstruct", "--chi", str(root / "fused" / "chi_bar.raw"), "--init", str(root / "fused" / "view0_pre.raw"),
             "--iters", "30", "--log-every", "5", "--out", str(root / "rec")]),
        run(["metrics", "--recon", str(root / "rec" / "recon.raw"), "--truth", str(root / "sim" / "truth.raw"),
             "--profile", "4,12,12,20,12,12", "--out", str(root / "met")]),
    ]
    return root, codes


def test_help(capsys):
    assert run(["--help"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "exit codes" in out and "reconstruct" in out
    assert run(["reconstruct", "--help"]) == EXIT_OK


def test_unknown_subcommand(capsys):
    assert run(["frobnicate"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "frobnicate" in err and len(err.strip().splitlines()) == 1


def test_unknown_flag_and_missing_option(capsys, tmp_path):
    assert run(["simulate", "--bogus", "--out", str(tmp_path)]) == EXIT_USAGE
    assert run(["fuse", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "--views" in capsys.readouterr().err


def test_error_codes(tmp_path, capsys):
    assert run(["reconstruct", "--chi", str(tmp_path / "none.raw"), "--out", str(tmp_path / "o")]) == EXIT_INPUT
    assert run(["simulate", "--noise", "-1", "--out", str(tmp_path / "s")]) == EXIT_CONTRACT
    for line in capsys.readouterr().err.strip().splitlines():
        assert line.startswith("acfusion")


def test_pipeline_outputs(pipeline):
    root, codes = pipeline
    assert codes == [EXIT_OK] * 4
    man = json.loads((root / "sim" / "manifest.json").read_text())
    assert len(man["views"]) == 12 and man["phantom"]["kind"] == "spheres"
    chi = load_autocorr(root / "fused" / "chi_bar.raw")
    assert chi.layout == "native" and chi.dims == (48, 48, 48)
    fuse_run = json.loads((root / "fused" / "run.json").read_text())
    assert fuse_run["fusion"]["pad"] == "linear" and len(fuse_run["fusion"]["displacements"]) == 12
    assert (root / "fused" / "o_bar_direct.raw").exists()
    trace = (root / "rec" / "recon_trace.csv").read_text().splitlines()
    assert trace[0] == "t,idiv,flux"
    assert [int(r.split(",")[0]) for r in trace[1:]] == [0, 5, 10, 15, 20, 25, 30]
    assert (root / "rec" / "recon_trace.png").stat().st_size > 0
    assert load_volume(root / "rec" / "recon.raw").dims == (24, 24, 24)
    assert read_pgm16(root / "rec" / "recon_mip_z.pgm").shape == (24, 24)
    met = json.loads((root / "met" / "metrics.json").read_text())
    assert set(met) >= {"ncc", "mse"} and -1 <= met["ncc"] <= 1
    assert (root / "met" / "profiles.csv").read_text().startswith("profile,volume,position_um,value")
    assert (root / "met" / "profiles.png").exists()


def test_provenance(pipeline):
    root, _ = pipeline
    rec = json.loads((root / "rec" / "run.json").read_text())
    assert rec["command"] == "reconstruct"
    assert rec["config"]["iters"] == 30 and rec["config"]["method"] == "ss"
    assert any(k.endswith("chi_bar.raw") for k in rec["inputs"])
    assert all(len(h) == 64 for h in rec["inputs"].values())
    assert {"numpy", "scipy", "python", "acfusion"} <= set(rec["versions"])
    assert rec["wall_time_s"] >= 0
    for sub in ("sim", "fused", "met"):
        assert (root / sub / "run.json").exists()


def test_rerun_from_provenance_is_identical(pipeline, tmp_path):
    root, _ = pipeline
    assert run(["reconstruct", "--config", str(root / "rec" / "run.json"), "--out", str(tmp_path)]) == EXIT_OK
    for name in ("recon.raw", "recon_trace.csv"):
        assert (tmp_path / name).read_bytes() == (root / "rec" / name).read_bytes()


def test_reconstruct_au_and_psf(pipeline, tmp_path):
    root, _ = pipeline
    assert run(["psf", "--dims", "24", "--sigma", "1,1,1", "--iters", "10", "--out", str(tmp_path / "psf")]) == EXIT_OK
    summary = json.loads((tmp_path / "psf" / "psf_summary.json").read_text())
    assert summary["fwhm_h_bar_x"] > 0
    assert (tmp_path / "psf" / "psf_profiles.csv").read_text().startswith("axis,kernel,index,value")
    args = ["reconstruct", "--chi", str(root / "fused" / "chi_bar.raw"), "--method", "au", "--iters", "5",
            "--out", str(tmp_path / "au")]
    assert run(args) == EXIT_USAGE
    assert run(args + ["--psf-acorr", str(tmp_path / "psf" / "H_bar.raw")]) == EXIT_OK
    rec = json.loads((tmp_path / "au" / "run.json").read_text())
    # auto init prefers the aligned mean written by fuse --baseline
    assert rec["init"].endswith("o_bar_direct.raw")


def test_baseline(pipeline, tmp_path):
    root, _ = pipeline
    assert run(["baseline", "--views", str(root / "sim"), "--out", str(tmp_path)]) == EXIT_OK
    a = load_volume(tmp_path / "o_bar_direct.raw")
    b = load_volume(root / "fused" / "o_bar_direct.raw")
    assert a == b
    rows = (tmp_path / "displacements.csv").read_text().splitlines()
    assert rows[0] == "view,angle_deg,mx,my,mz" and len(rows) == 13


def test_views_without_manifest_need_angles(pipeline, tmp_path):
    root, _ = pipeline
    for f in (root / "sim").glob("view_00[01].*"):
        (tmp_path / f.name).write_bytes(f.read_bytes())
    assert run(["fuse", "--views", str(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_USAGE
    assert run(["fuse", "--views", str(tmp_path), "--angles", "0,30", "--out", str(tmp_path / "o")]) == EXIT_OK
    assert run(["fuse", "--views", str(tmp_path), "--angles", "0", "--out", str(tmp_path / "o")]) == EXIT_CONTRACT


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dims": 24, "count": 2, "sigma": [1, 1, 1], "seed": 3, "shift_max": 1.0}))
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == EXIT_OK
    assert run(["simulate", *SMALL, "--out", str(tmp_path / "b")]) == EXIT_OK
    assert (tmp_path / "a" / "view_005.raw").read_bytes() == (tmp_path / "b" / "view_005.raw").read_bytes()
    cfg.write_text(json.dumps({"dimz": 24}))
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "c")]) == EXIT_USAGE
