import json
import subprocess
import sys

import numpy as np
import pytest

from stereopane import bundle as bundle_io
from stereopane.cli import PipelineConfig, build_config, load_config_file, run
from stereopane.core import StereopaneError


def cli(*args):
    return subprocess.run([sys.executable, "-m", "stereopane.cli", *args],
                          capture_output=True, text=True)


@pytest.fixture(scope="module")
def workdir(fixture_records, tmp_path_factory):
    out = tmp_path_factory.mktemp("work")
    rc = run(["all", str(fixture_records), "--out", str(out)])
    assert rc == 0
    return out


def read_log(out):
    return [json.loads(line) for line in
            (out / "run_log.jsonl").read_text().splitlines()]


def test_all_builds_two_bundles_and_culls_one(workdir):
    log = read_log(workdir)
    culled = [e for e in log if e["status"] == "cull"]
    built = [e for e in log if e["stage"] == "build" and e["status"] == "ok"]
    assert len(culled) == 1 and culled[0]["record"] == "0003"
    assert sorted(e["record"] for e in built) == ["0001", "0002"]
    assert (workdir / "0001" / "bundle" / "manifest.json").is_file()
    assert not (workdir / "0003" / "bundle").exists()


def test_log_is_machine_readable(workdir):
    for entry in read_log(workdir):
        assert set(entry) == {"record", "stage", "status", "reason"}


def test_render_reference_view(workdir, tmp_path):
    bdir = workdir / "0001" / "bundle"
    out = tmp_path / "ref.png"
    rc = run(["render", str(bdir), "--eye", "0,0,0", "--out", str(out)])
    assert rc == 0
    img = bundle_io.load_png_gray(out)
    ref = bundle_io.load(bdir).gds[0].intensity.data
    close = np.abs(img - ref) <= 1.5 / 255
    assert close.mean() >= 0.95


def test_render_frame_path(workdir, tmp_path):
    bdir = workdir / "0001" / "bundle"
    rc = run(["render", str(bdir), "--path", "--frames", "5",
              "--out", str(tmp_path / "seq")])
    assert rc == 0
    assert len(sorted((tmp_path / "seq").glob("frame_*.png"))) == 5


def test_bench_command(workdir):
    bdir = workdir / "0001" / "bundle"
    r = cli("bench", str(bdir), "--frames", "5")
    assert r.returncode == 0
    assert "p99=" in r.stdout


def test_metrics_command(workdir):
    bdir = str(workdir / "0001" / "bundle")
    r = cli("metrics", bdir, bdir)
    assert r.returncode == 0
    lines = [l for l in r.stdout.splitlines() if l.startswith("gd")]
    assert len(lines) == 5
    assert "l_hole=0.000000" in lines[0]


def test_unknown_subcommand_exits_2():
    r = cli("frobnicate")
    assert r.returncode == 2
    assert "usage" in (r.stderr + r.stdout).lower()


def test_missing_required_args_exits_2():
    r = cli("ingest")
    assert r.returncode == 2


def test_missing_workdir_is_fatal(tmp_path):
    assert run(["rectify", str(tmp_path / "missing")]) == 1


def test_corrupt_bundle_render_fails(workdir, tmp_path):
    import shutil
    bdir = tmp_path / "bundle"
    shutil.copytree(workdir / "0001" / "bundle", bdir)
    raw = bytearray((bdir / "gd0_nid.png").read_bytes())
    raw[-10] ^= 0x55
    (bdir / "gd0_nid.png").write_bytes(bytes(raw))
    assert run(["render", str(bdir), "--out", str(tmp_path / "x.png")]) == 1


def test_config_file_roundtrip(tmp_path):
    cfg_file = tmp_path / "cfg"
    cfg_file.write_text("patch = 7\nseed = 3  # comment\nmax_disp = 32\n")
    values = load_config_file(cfg_file)
    assert values == {"patch": 7, "seed": 3, "max_disp": 32}

    class Args:
        config = str(cfg_file)
        seed = None
        workers = None
        limit = None
        max_disp = None

    cfg = build_config(Args())
    assert cfg.patch == 7 and cfg.seed == 3 and cfg.max_disp == 32


def test_config_rejects_unknown_keys(tmp_path):
    cfg_file = tmp_path / "cfg"
    cfg_file.write_text("frobs = 2\n")

    class Args:
        config = str(cfg_file)
        seed = None
        workers = None
        limit = None
        max_disp = None

    with pytest.raises(StereopaneError, match="unknown config"):
        build_config(Args())


def test_config_defaults_match_published_constants():
    cfg = PipelineConfig()
    assert cfg.ratio_threshold == 0.7
    assert cfg.cull_min_matches == 10
    assert cfg.cull_fraction == 0.005
    assert cfg.review_fraction == 0.015
    assert cfg.vertical_slack == 2
    assert cfg.triangle_threshold == 0.1
    assert cfg.lambda_hole == 6.0
    assert cfg.lambda_tv == 0.1
    assert cfg.seed == 0


def test_invalid_config_rejected():
    with pytest.raises(StereopaneError):
        PipelineConfig(ratio_threshold=-1.0)
