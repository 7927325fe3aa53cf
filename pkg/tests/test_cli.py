import json

import pytest

from twinsim import cli, pipeline
from twinsim.config import SEED_ENV
from twinsim.errors import PhysicalityError
from twinsim.montecarlo import read_pgm

SMALL = {
    "grid": {"pixel_count": 128, "pitch": 4.0},
    "source": {"gain_peak": 1.5, "pump_waist": 300.0, "coherence_length": 30.0, "seed_waist": 220.0},
    "conduit": {"crosstalk_angle": 0.15, "phase_seed": 3},
    "imaging_blur": 20.0,
    "attenuator": "optimal",
    "slit_width": 56.0,
    "scan": {"probe_centers": [-40.0, 0.0, 40.0],
             "conj_centers": {"start": -200, "stop": 200, "step": 8}},
    "mc": {"n_samples": 1000, "grid2d": {"nx": 96, "ny": 96, "pitch": 1.5}, "nearfield_waist": 40.0},
    "output": {"dir": "unused", "figures": True},
}


@pytest.fixture(autouse=True)
def _isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(SEED_ENV, raising=False)


def write_config(path, **changes):
    doc = json.loads(json.dumps(SMALL))
    doc.update(changes)
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def config(tmp_path):
    return write_config(tmp_path / "small.json")


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


def test_scan_outputs_and_rerun_identical(config, tmp_path, capsys):
    assert run("scan", "--config", config, "--out", tmp_path / "a") == 0
    assert run("scan", "--config", config, "--out", tmp_path / "b", "--threads", 3) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert set(a) == {"scan.csv", "profile.csv", "fits.csv", "phase_screen.csv", "scan.png"}
    assert a == b
    out = capsys.readouterr().out
    assert "mean kappa" in out and "minimum symplectic eigenvalue" in out


def test_every_output_carries_the_hash(config, tmp_path, capsys):
    out = tmp_path / "o"
    for cmd in ("scan", "optimize", "farfield"):
        assert run(cmd, "--config", config, "--out", out) == 0
    h = capsys.readouterr().out.split("config_hash ")[1].split()[0]
    files = snapshot(out)
    assert len(files) == 12
    for name, data in files.items():
        assert f"config_hash={h}".encode() in data, name
        if name.endswith(".csv"):
            assert data.startswith(f"# config_hash={h}\n".encode())


def test_no_tmp_files_left(config, tmp_path):
    assert run("optimize", "--config", config, "--out", tmp_path / "o") == 0
    assert not list((tmp_path / "o").glob("*.tmp"))


def test_default_out_dir_from_config(config, tmp_path):
    assert run("optimize", "--config", config) == 0
    assert (tmp_path / "unused" / "attenuation.csv").exists()


def test_figures_off(tmp_path):
    cfg = write_config(tmp_path / "c.json", output={"dir": "o", "figures": False})
    assert run("optimize", "--config", cfg) == 0
    assert [p.name for p in (tmp_path / "o").iterdir()] == ["attenuation.csv"]


def test_optimize_values(config, tmp_path, capsys):
    assert run("optimize", "--config", config, "--out", tmp_path / "o") == 0
    out = capsys.readouterr().out
    assert "a* 0.743" in out and "-1.536" in out
    rows = (tmp_path / "o" / "attenuation.csv").read_text().splitlines()
    assert rows[2] == "transmission,attenuation,v_rel,noise_db"
    assert len(rows) > 100


def test_farfield_outputs(config, tmp_path):
    assert run("farfield", "--config", config, "--out", tmp_path / "o") == 0
    lines = (tmp_path / "o" / "speckle.csv").read_text().splitlines()
    assert lines[2].startswith("random_phase,") and lines[3].startswith("zero_phase,")
    cells = lines[2].split(",")
    assert float(cells[-2]) == pytest.approx(float(cells[-1]), rel=1e-9)
    assert read_pgm(tmp_path / "o" / "farfield.pgm").shape == (96, 96)


def test_fit_reproduces_scan_fits(config, tmp_path):
    out = tmp_path / "o"
    assert run("scan", "--config", config, "--out", out) == 0
    first = (out / "fits.csv").read_bytes()
    (out / "fits.csv").unlink()
    assert run("fit", "--out", out) == 0
    assert (out / "fits.csv").read_bytes() == first


def test_fit_missing_or_malformed_input(tmp_path):
    assert run("fit", "--out", tmp_path / "empty") == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("# config_hash=0\nnonsense\n1,2\n")
    assert run("fit", "--scan", bad, "--profile", bad, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("changes", [
    {"bogus": 1},
    {"source": {"gain_peak": 0.5}},
    {"scan": {"probe_centers": [9000.0], "conj_centers": [0.0]}},
])
def test_config_errors_exit_2_and_write_nothing(tmp_path, changes, capsys):
    cfg = write_config(tmp_path / "bad.json", **changes)
    assert run("scan", "--config", cfg, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()
    assert "config error" in capsys.readouterr().err


def test_missing_config_and_bad_env_seed(tmp_path, monkeypatch, config):
    assert run("scan", "--config", tmp_path / "nope.json", "--out", tmp_path / "o") == 2
    monkeypatch.setenv(SEED_ENV, "abc")
    assert run("optimize", "--config", config, "--out", tmp_path / "o") == 2
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("argv", [["scan", "--seed", "-1"], ["scan", "--threads", "0"], ["launch"]])
def test_bad_arguments_exit_2(argv):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 2


def test_numerical_failure_exit_3(config, tmp_path, monkeypatch, capsys):
    def broken(cfg, monitor=None):
        raise PhysicalityError("after conduit: minimum symplectic eigenvalue 0.9")

    monkeypatch.setattr(pipeline, "build_state", broken)
    assert run("scan", "--config", config, "--out", tmp_path / "o") == 3
    assert not (tmp_path / "o").exists()
    err = capsys.readouterr().err
    assert "numerical failure" in err and "PhysicalityError" in err


def test_floating_point_error_exit_3(config, tmp_path, monkeypatch):
    def overflow(*a, **k):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(cli.analysis, "optimize_attenuation", overflow)
    assert run("optimize", "--config", config, "--out", tmp_path / "o") == 3
    assert not (tmp_path / "o").exists()


def test_seed_changes_outputs(config, tmp_path, monkeypatch):
    assert run("scan", "--config", config, "--out", tmp_path / "a", "--seed", 1) == 0
    monkeypatch.setenv(SEED_ENV, "1")
    assert run("scan", "--config", config, "--out", tmp_path / "b") == 0
    assert run("scan", "--config", config, "--out", tmp_path / "c", "--seed", 2) == 0
    a = (tmp_path / "a" / "phase_screen.csv").read_bytes()
    assert a == (tmp_path / "b" / "phase_screen.csv").read_bytes()
    assert a != (tmp_path / "c" / "phase_screen.csv").read_bytes()


@pytest.mark.parametrize("name", ["../escape.csv", "sub/x.csv", "/abs.csv", ".."])
def test_write_outputs_stays_inside(tmp_path, name):
    with pytest.raises(ValueError):
        cli.write_outputs(tmp_path / "o", {"ok.csv": b"1", name: b"x"})
    assert not (tmp_path / "o").exists()
    assert not (tmp_path / "escape.csv").exists()


@pytest.mark.slow
def test_selftest_passes(capsys):
    assert run("selftest", "--threads", 2) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4 and "selftest passed" in out


@pytest.mark.slow
@pytest.mark.parametrize("fault,name", [
    ("cov", "physicality"),
    ("asymmetric", "physicality"),
    ("phase", "phase_screen_invariance"),
])
def test_selftest_catches_injected_fault(fault, name, capsys):
    assert run("selftest", "--inject-fault", fault) == 1
    out = capsys.readouterr().out
    assert f"FAIL {name}" in out
    assert "selftest failed" in out
