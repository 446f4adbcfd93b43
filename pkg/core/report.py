# =============================================================================
# core/report.py  —  Run Artifacts (CSV traces, density grids, JSON summary)
# =============================================================================
#
# WHAT THIS MODULE WRITES (into one output directory per run):
#   elbo_trace.csv     one row per iteration: ELBO ± SE, |grad|, cost, λ
#   density_grid.csv   marginal densities of the final q on a grid, plus a
#                      kernel-density estimate of ABC-AR samples and an
#                      analytic oracle curve when given
#   summary.json       config echo, cost totals, tail ELBO, final λ
#
#   plus standalone writers for ABC samples, variance tables and decay-rate
#   sweeps used by the CLI subcommands.
#
# All files are plain CSV / JSON for external plotting.  summary.json embeds
# the config under "config", so `main.py replay summary.json` re-runs it.
# =============================================================================

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import gaussian_kde, norm

from core import gaussian_family
from core.errors import ReportError
from core.models import AbcSample, RunTrace, VarianceTable

logger = logging.getLogger(__name__)

GRID_POINTS = 201


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise ReportError(f"cannot write {exc.strerror or exc}", path=str(path)) from exc
    return path


def write_json(data: dict, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(data, indent=2, allow_nan=True))
    except OSError as exc:
        raise ReportError(f"cannot write {exc.strerror or exc}", path=str(path)) from exc
    return path


# =============================================================================
# Trace & summary
# =============================================================================
def write_trace_csv(trace: RunTrace, path: str | Path) -> Path:
    if not trace.records:
        raise ReportError("trace has no iterations", path=str(path))
    n_lam = len(trace.records[0].lam)
    header = [
        "iteration", "elbo", "elbo_se", "grad_norm", "cost", "cumulative_cost",
        "mean_level", "resampled", "wall_time", "stream_key",
    ] + [f"lam_{j}" for j in range(n_lam)]
    rows = (
        [r.iteration, r.elbo, r.elbo_se, r.grad_norm, r.cost, r.cumulative_cost,
         r.mean_level, r.resampled, r.wall_time, ".".join(map(str, r.stream_key))] + r.lam
        for r in trace.records
    )
    return _write_csv(Path(path), header, rows)


def summarize(trace: RunTrace, max_density_gap: Optional[float] = None) -> dict:
    """The JSON run summary (config echo, costs, tail ELBO, final λ)."""
    if not trace.records or trace.final_params is None:
        raise ReportError("cannot summarize an empty trace")
    params = trace.final_params
    draws = len(trace.records) * int(trace.config.get("outer_samples", 1))
    summary = {
        "method": trace.method,
        "model": trace.model,
        "seed": trace.seed,
        "parameterization": trace.parameterization,
        "iterations": len(trace.records),
        "stopped_early": trace.stopped_early,
        "total_cost": trace.total_cost,
        "mean_cost_per_draw": trace.total_cost / draws if draws else float("nan"),
        "tail_window": trace.tail_window,
        "tail_elbo": trace.tail_elbo,
        "final_params": gaussian_family.params_to_dict(params),
        "final_mean": params.mu.tolist(),
        "final_sd": gaussian_family.marginal_sd(params).tolist(),
        "wall_time": trace.records[-1].wall_time,
        "config": trace.config,
    }
    if max_density_gap is not None:
        summary["max_density_gap"] = max_density_gap
    return summary


# =============================================================================
# Density grids
# =============================================================================
def density_grid(
    trace: RunTrace,
    abc: Optional[AbcSample] = None,
    oracle: Optional[Sequence[tuple[float, float]]] = None,
    points: int = GRID_POINTS,
) -> tuple[list[list], Optional[float]]:
    """Rows (coordinate, x, q, abc_kde, oracle) and the max |q - oracle|.

    `oracle` gives a (mean, variance) Gaussian per coordinate; missing
    columns are left empty.
    """
    if trace.final_params is None:
        raise ReportError("trace has no final parameters")
    params = trace.final_params
    mean, sd = params.mu, gaussian_family.marginal_sd(params)
    rows: list[list] = []
    gap = None
    for j in range(params.p):
        lo, hi = mean[j] - 5.0 * sd[j], mean[j] + 5.0 * sd[j]
        kde = None
        if abc is not None and abc.thetas.shape[0] > 1:
            column = abc.thetas[:, j]
            if np.ptp(column) > 0.0:
                kde = gaussian_kde(column)
                lo, hi = min(lo, column.min()), max(hi, column.max())
        x = np.linspace(lo, hi, points)
        q = norm.pdf(x, loc=mean[j], scale=sd[j])
        abc_col = kde(x) if kde is not None else [""] * points
        if oracle is not None and j < len(oracle):
            o_mean, o_var = oracle[j]
            oracle_col = norm.pdf(x, loc=o_mean, scale=np.sqrt(o_var))
            gap_j = float(np.max(np.abs(q - oracle_col)))
            gap = gap_j if gap is None else max(gap, gap_j)
        else:
            oracle_col = [""] * points
        rows.extend([j, xi, qi, ai, oi] for xi, qi, ai, oi in zip(x, q, abc_col, oracle_col))
    return rows, gap


def report(
    trace: RunTrace,
    out_dir: str | Path,
    abc: Optional[AbcSample] = None,
    oracle: Optional[Sequence[tuple[float, float]]] = None,
) -> dict:
    """Write elbo_trace.csv, density_grid.csv and summary.json; return their paths."""
    if not trace.records:
        raise ReportError("trace has no iterations", path=str(out_dir))
    out = Path(out_dir)
    grid_rows, gap = density_grid(trace, abc, oracle)
    paths = {
        "trace": write_trace_csv(trace, out / "elbo_trace.csv"),
        "density_grid": _write_csv(
            out / "density_grid.csv", ["coordinate", "x", "q_density", "abc_density", "oracle_density"], grid_rows
        ),
        "summary": write_json(summarize(trace, gap), out / "summary.json"),
    }
    logger.info("wrote run artifacts to %s", out)
    return {k: str(v) for k, v in paths.items()}


# =============================================================================
# Standalone tables
# =============================================================================
def write_abc_csv(sample: AbcSample, path: str | Path) -> Path:
    header = [f"theta_{j + 1}" for j in range(sample.thetas.shape[1])]
    return _write_csv(Path(path), header, sample.thetas.tolist())


def write_variance_csv(table: VarianceTable, path: str | Path) -> Path:
    rows = [[name] + row.tolist() for name, row in zip(table.placements, table.variances)]
    return _write_csv(Path(path), ["placement"] + table.coordinates, rows)


def write_rates_csv(rows: list[dict], path: str | Path) -> Path:
    header = ["kind", "inner", "level", "log2_moment", "r"]
    return _write_csv(Path(path), header, ([row[k] for k in header] for row in rows))
