import csv
import json
from pathlib import Path

import numpy as np
import pytest

from core import gaussian_family as gf
from core.config import config_to_dict, load_config
from core.engine import run
from core.errors import ReportError
from core.models import AbcSample, IterationRecord, RunTrace, VarianceTable
from core.report import density_grid, report, summarize, write_rates_csv, write_variance_csv

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _hand_trace(params, records=3):
    trace = RunTrace(method="sf_mlmc", model="toy", seed=0, parameterization=gf.kind_of(params),
                     config={"outer_samples": 10}, tail_window=2)
    for t in range(records):
        trace.records.append(IterationRecord(
            iteration=t, lam=gf.flat(params).tolist(), grad_norm=0.0, elbo=-1.0 - t, elbo_se=0.1,
            cost=10, cumulative_cost=10 * (t + 1), mean_level=0.5, resampled=0,
            stream_key=(0, t), wall_time=0.01 * t,
        ))
    trace.final_params = params
    return trace


def test_report_writes_the_run_artifacts(tmp_path):
    config = load_config(CONFIGS / "toy_sf.toml").with_overrides(outer_samples=8, iterations=3)
    trace = run(config)
    paths = report(trace, tmp_path / "run", oracle=[(0.0, 0.2)])
    assert set(paths) == {"trace", "density_grid", "summary"}
    trace_rows = _rows(paths["trace"])
    assert len(trace_rows) == 3 + 1
    assert trace_rows[0][:3] == ["iteration", "elbo", "elbo_se"]
    assert trace_rows[0][-2:] == ["lam_0", "lam_1"]
    grid = _rows(paths["density_grid"])
    assert grid[0] == ["coordinate", "x", "q_density", "abc_density", "oracle_density"]
    assert len(grid) == 201 + 1
    summary = json.loads(Path(paths["summary"]).read_text())
    assert summary["iterations"] == 3
    assert summary["total_cost"] == trace.total_cost
    assert summary["mean_cost_per_draw"] == pytest.approx(trace.total_cost / 24)
    assert summary["config"] == config_to_dict(config)
    assert "max_density_gap" in summary
    assert summary["final_params"]["kind"] == "sf"


def test_density_gap_vanishes_at_the_oracle(toy):
    mean, var = toy.abc_posterior()
    trace = _hand_trace(gf.from_moments("rp", [mean], [[var]]))
    rows, gap = density_grid(trace, oracle=[(mean, var)])
    assert gap == pytest.approx(0.0, abs=1e-12)
    assert all(row[3] == "" for row in rows)
    _, far = density_grid(trace, oracle=[(mean + 1.0, var)])
    assert far > 0.1


def test_density_grid_with_abc_draws(toy):
    trace = _hand_trace(gf.from_moments("sf", [0.0], [[0.2]]))
    thetas = np.random.default_rng(0).normal(0.0, 0.45, size=(500, 1))
    rows, gap = density_grid(trace, abc=AbcSample(thetas, 500, 5000), points=11)
    assert gap is None
    assert len(rows) == 11
    assert all(isinstance(row[3], float) and row[3] >= 0.0 for row in rows)
    assert all(row[4] == "" for row in rows)


def test_summary_fields():
    trace = _hand_trace(gf.from_moments("sf", [0.5], [[4.0]]))
    summary = summarize(trace)
    assert summary["tail_elbo"] == pytest.approx(-2.5)
    assert summary["final_mean"] == [0.5]
    assert summary["final_sd"] == pytest.approx([2.0])
    assert summary["mean_cost_per_draw"] == pytest.approx(1.0)
    assert "max_density_gap" not in summary


def test_empty_traces_are_rejected(tmp_path):
    empty = RunTrace(method="sf_mlmc", model="toy", seed=0, parameterization="sf", config={})
    with pytest.raises(ReportError):
        report(empty, tmp_path)
    with pytest.raises(ReportError):
        summarize(empty)


def test_unwritable_locations_raise_report_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    trace = _hand_trace(gf.from_moments("sf", [0.0], [[1.0]]))
    with pytest.raises(ReportError) as info:
        report(trace, blocker / "run")
    assert str(blocker) in str(info.value)


def test_table_writers(tmp_path):
    table = VarianceTable(["none", "both"], ["mu_1", "L_11"], np.array([[1.0, 2.0], [0.5, 0.25]]),
                          np.zeros((2, 2)), repetitions=10)
    rows = _rows(write_variance_csv(table, tmp_path / "variance.csv"))
    assert rows[0] == ["placement", "mu_1", "L_11"]
    assert rows[2] == ["both", "0.5", "0.25"]
    rates = [{"kind": "elbo", "inner": "pseudorandom", "level": 1, "log2_moment": -2.0, "r": 1.5}]
    rows = _rows(write_rates_csv(rates, tmp_path / "rates.csv"))
    assert rows == [["kind", "inner", "level", "log2_moment", "r"], ["elbo", "pseudorandom", "1", "-2.0", "1.5"]]
