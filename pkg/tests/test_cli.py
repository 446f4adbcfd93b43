import json
from pathlib import Path

import pytest

from main import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for name in ("MLMCVB_OUT_DIR", "MLMCVB_THREADS", "MLMCVB_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def test_fit_then_replay(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "fit", str(CONFIGS / "toy_sf.toml"), "--iterations", "3"])
    assert code == 0
    run_dir = tmp_path / "toy_sf_mlmc_seed0"
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["iterations"] == 3
    assert (run_dir / "elbo_trace.csv").exists() and (run_dir / "density_grid.csv").exists()
    printed = json.loads(capsys.readouterr().out)
    assert printed["total_cost"] == summary["total_cost"]

    assert main(["--out-dir", str(tmp_path), "--quiet", "replay", str(run_dir / "summary.json")]) == 0
    replayed = json.loads((run_dir / "summary.json").read_text())
    assert replayed["final_params"] == summary["final_params"]
    assert replayed["tail_elbo"] == summary["tail_elbo"]


def test_bad_config_exits_with_code_two(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('method = "mcmc"\n')
    assert main(["--out-dir", str(tmp_path), "fit", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "error:" in err and "Traceback" not in err


def test_bad_environment_exits_with_code_two(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("MLMCVB_THREADS", "lots")
    assert main(["--out-dir", str(tmp_path), "fit", str(CONFIGS / "toy_sf.toml")]) == 2
    assert "MLMCVB_THREADS" in capsys.readouterr().err


def test_abc_ar_command(tmp_path, capsys):
    code = main(["--out-dir", str(tmp_path), "abc-ar", "--model", "toy", "--h", "0.5", "--accepted", "20"])
    assert code == 0
    lines = (tmp_path / "toy_abc_seed0" / "abc_samples.csv").read_text().splitlines()
    assert lines[0] == "theta_1"
    assert len(lines) == 21
    assert "accepted 20 of" in capsys.readouterr().out


def test_elbo_command(capsys):
    assert main(["elbo", str(CONFIGS / "toy_sf.toml"), "--samples", "50"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["samples"] == 50
    assert set(result) == {"elbo", "std_error", "samples", "analytic_elbo"}


def test_missing_glmm_data_exits_with_code_two(tmp_path, capsys):
    run_file = tmp_path / "glmm.toml"
    run_file.write_text(
        'method = "rp_mlmc"\niterations = 1\n\n[model]\nname = "glmm"\n'
        f'data_path = "{(tmp_path / "absent.csv").as_posix()}"\n'
    )
    assert main(["--out-dir", str(tmp_path), "fit", str(run_file)]) == 2
    err = capsys.readouterr().err
    assert "cannot read" in err and "Traceback" not in err
