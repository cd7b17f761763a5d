import json
import subprocess
import sys

import pytest

from gelshatter.cli import main


def _run(tmp_path, name, *extra):
    out = tmp_path / name
    rc = main(["run", "--M", "200", "--K", "0.9", "--F", "0.1", "--steps", "2e4",
               "--sample-interval", "10", "--seed", "5", "--out", str(out), *extra])
    return rc, out


def test_run_is_byte_reproducible(tmp_path, capsys):
    rc1, a = _run(tmp_path, "a")
    rc2, b = _run(tmp_path, "b")
    assert rc1 == rc2 == 0
    for name in ("samples.csv", "shatters.csv", "trajectory.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert "cycles=" in capsys.readouterr().out


def test_invalid_config_exits_2_and_names_field(tmp_path, capsys):
    rc = main(["run", "--M", "100", "--F", "-0.5", "--out", str(tmp_path / "x")])
    assert rc == 2
    assert "F_hat" in capsys.readouterr().err


def test_output_collision_requires_force(tmp_path):
    rc, out = _run(tmp_path, "a")
    assert rc == 0
    rc, _ = _run(tmp_path, "a")
    assert rc == 2
    rc, _ = _run(tmp_path, "a", "--force")
    assert rc == 0


def test_no_fragmentation_reports_zero_cycles(tmp_path, capsys):
    rc = main(["run", "--M", "50", "--K", "1", "--F", "0", "--steps", "5000",
               "--out", str(tmp_path / "z")])
    assert rc == 0
    out = capsys.readouterr().out
    assert "cycles=0" in out and "k_max=50" in out


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('M = 300\nK = 0.5\nF = 0.5\nsteps = 1000\nsample_interval = 100\nseed = 3\n')
    out = tmp_path / "c"
    assert main(["run", "--config", str(cfg), "--M", "400", "--out", str(out)]) == 0
    doc = json.loads((out / "trajectory.json").read_text())
    assert doc["config"]["M"] == 400
    assert doc["config"]["K_hat"] == 0.5


def test_unknown_config_key_rejected(tmp_path):
    cfg = tmp_path / "bad.toml"
    cfg.write_text("M = 10\nbogus = 1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_replicas_written_per_directory(tmp_path):
    rc, out = _run(tmp_path, "r", "--replicas", "2", "--workers", "1")
    assert rc == 0
    assert (out / "replica_000" / "samples.csv").exists()
    assert (out / "replica_001" / "samples.csv").exists()


def test_meanfield_zero_time_and_closed_form(tmp_path, capsys):
    out = tmp_path / "mf"
    assert main(["meanfield", "--K", "1", "--F", "1", "--Kc", "50", "--T", "0",
                 "--out", str(out)]) == 0
    info = json.loads((out / "meanfield.json").read_text())
    assert info["rho1"] == pytest.approx(0.75)
    assert info["mass_drift"] == 0
    lines = (out / "density.csv").read_text().splitlines()
    assert lines[1] == "1,1.0" and lines[2] == "2,0.0"


def test_meanfield_unstable_step_exits_1(tmp_path):
    assert main(["meanfield", "--Kc", "500", "--dt", "1", "--T", "5", "--K", "1", "--F", "1",
                 "--out", str(tmp_path / "u")]) == 1


def test_analyze_writes_summary(tmp_path, capsys):
    rc, out = _run(tmp_path, "a")
    assert main(["analyze", str(out / "trajectory.json")]) == 0
    res = json.loads((out / "trajectory_analysis.json").read_text())
    assert res["n_cycles"] > 2
    assert res["recurrence"]["preferred"] in ("exponential", "rayleigh")


CAMPAIGN = """M = [200]
F_hat = [0.05]
replicas = 2
seed = 11
steps = 20000
sample_interval = 10
"""


def test_sweep_matches_direct_run_and_resumes(tmp_path, capsys):
    camp = tmp_path / "c.toml"
    camp.write_text(CAMPAIGN)
    out = tmp_path / "sweep"
    assert main(["sweep", str(camp), "--out", str(out), "--workers", "1"]) == 0
    point = json.loads((out / "points" / "p000" / "point.json").read_text())
    from gelshatter.campaign import CampaignSpec, run_points
    spec = CampaignSpec.load(camp)
    direct = run_points(spec.configs(), 2, 11)[0]
    assert point["rng_fingerprints"] == [t.rng_fingerprint for t in direct]
    assert point["recurrence_times"] == [t.recurrence_times().tolist() for t in direct]

    manifest = out / "manifest.json"
    stamp = json.loads(manifest.read_text())["points"]["p000"]["finished"]
    mtime = (out / "points" / "p000" / "point.json").stat().st_mtime_ns
    assert main(["sweep", str(camp), "--out", str(out), "--workers", "1"]) == 0
    assert json.loads(manifest.read_text())["points"]["p000"]["finished"] == stamp
    assert (out / "points" / "p000" / "point.json").stat().st_mtime_ns == mtime


def test_sweep_worker_count_does_not_change_results(tmp_path):
    camp = tmp_path / "c.toml"
    camp.write_text(CAMPAIGN)
    for w in ("1", "2"):
        assert main(["sweep", str(camp), "--out", str(tmp_path / w), "--workers", w]) == 0
    a = (tmp_path / "1" / "scaling.csv").read_bytes()
    b = (tmp_path / "2" / "scaling.csv").read_bytes()
    assert a == b


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "gelshatter", "--help"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "reproduce" in res.stdout


@pytest.mark.slow
def test_reproduce_fig3(tmp_path, capsys):
    out = tmp_path / "fig3"
    assert main(["reproduce", "fig3", "--out", str(out), "--seed", "1"]) == 0
    assert len(list(out.glob("heatmap_*.csv"))) == 4
    assert (out / "fig3.gp").exists()
