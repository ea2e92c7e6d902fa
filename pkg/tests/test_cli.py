import json
from pathlib import Path

import pytest
from filelock import FileLock

from nnmstab import csvio
from nnmstab.cli import main

CONFIGS = Path(__file__).parents[1] / "configs"

DUFFING = """
[system]
kind = "duffing"
[perturbation]
kind = "generic"
params = { alpha = 0.1, forcing = [{ dof = 0, amplitude = 1.0 }] }
"""

STALL = """
[system]
kind = "duffing"
[family]
step = 50.0
min_step = 40.0
max_step = 50.0
stop_on_flags = []
"""


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("linear")
    code = run("backbone", "--config", CONFIGS / "linear.toml", "--out", out)
    return code, out


def test_backbone_writes_outputs(linear_run):
    code, out = linear_run
    assert code == 0
    meta, cols, rows = csvio.read_csv(out / "backbone.csv")
    assert cols[:4] == ["h", "tau", "omega", "omega_bar"]
    assert meta[0].startswith("# nnmstab")
    assert all(r[2] == pytest.approx(1.0, abs=1e-9) for r in rows)
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok"
    assert set(man["files"]) >= {"backbone.csv", "multipliers.csv"}
    assert (out / "config.toml").exists()


def test_rerun_is_byte_identical(linear_run):
    _, out = linear_run
    before = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file() and not p.name.startswith(".")}
    assert run("backbone", "--config", CONFIGS / "linear.toml", "--out", out) == 0
    after = {p.name: p.read_bytes() for p in out.iterdir() if p.is_file() and not p.name.startswith(".")}
    assert before == after


def test_unknown_key_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(DUFFING + "\n[family]\nstepsize = 0.1\n")
    assert run("backbone", "--config", cfg, "--out", tmp_path / "o") == 2
    assert "stepsize" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert run("backbone", "--config", tmp_path / "nope.toml", "--out", tmp_path / "o") == 2


def test_bad_override(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING)
    assert run("backbone", "--config", cfg, "--out", tmp_path / "o", "--override", "family.nope=1") == 2


def test_locked_output_directory(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING)
    out = tmp_path / "o"
    out.mkdir()
    with FileLock(str(out / ".nnmstab.lock")):
        assert run("backbone", "--config", cfg, "--out", out) == 2


def test_equilibrium_seed_is_numerical_failure(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING)
    seed = tmp_path / "seed.txt"
    seed.write_text("# q p T\n0 0 1.0\n")
    out = tmp_path / "o"
    assert run("melnikov", "--config", cfg, "--out", out, "--seed-orbit", seed) == 3
    assert json.loads((out / "manifest.json").read_text())["status"] == "numerical-failure"


def test_malformed_seed_file(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING)
    seed = tmp_path / "seed.txt"
    seed.write_text("0.5 0.0\n")
    assert run("melnikov", "--config", cfg, "--out", tmp_path / "o", "--seed-orbit", seed) == 2


def test_stalled_continuation_is_partial(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text(STALL)
    out = tmp_path / "o"
    assert run("backbone", "--config", cfg, "--out", out) == 4
    _, _, rows = csvio.read_csv(out / "backbone.csv")
    assert len(rows) >= 1
    assert json.loads((out / "manifest.json").read_text())["status"] == "partial"


def test_config_wins_over_flag(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING + "\n[run]\nthreads = 1\n")
    seed = tmp_path / "seed.txt"
    seed.write_text("0.8 0.0 5.5\n")
    with pytest.warns(UserWarning, match="--threads ignored"):
        code = run("melnikov", "--config", cfg, "--out", tmp_path / "o", "--seed-orbit", seed, "--threads", "3")
    assert code == 0


def test_duffing_melnikov_from_seed(tmp_path):
    cfg = tmp_path / "d.toml"
    cfg.write_text(DUFFING)
    seed = tmp_path / "seed.txt"
    seed.write_text("0.8 0.0 5.5\n")
    out = tmp_path / "o"
    assert run("melnikov", "--config", cfg, "--out", out, "--seed-orbit", seed) == 0
    _, cols, rows = csvio.read_csv(out / "melnikov_fit.csv")
    fit = dict(zip(cols, rows[0]))
    assert fit["n_zeros"] == 2 and fit["n_simple"] == 2
