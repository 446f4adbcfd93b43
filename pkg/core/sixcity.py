# =============================================================================
# core/sixcity.py  —  Six-City Wheeze Data (load, synthesize, write)
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Reads and writes the long-format table the GLMM consumes:
#
#     id, visit, y, age_centered, smoking
#
#   one row per (child, visit).  Every child must have the same number of
#   visits, numbered 1..J; y is 0/1; smoking is constant within a child.
#
#   The real data set is optional; synth_sixcity() simulates a table of the
#   same shape from the random-intercept logistic model at a chosen θ.
# =============================================================================

from __future__ import annotations

import csv
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from core.errors import IngestionError
from core.models import SixCityData

logger = logging.getLogger(__name__)

COLUMNS = ("id", "visit", "y", "age_centered", "smoking")
DEFAULT_AGES = (-2.0, -1.0, 0.0, 1.0)
N_CHILDREN = 537
SMOKING_RATE = 0.35


def _parse(row: list[str], index: int) -> tuple[int, int, int, float, int]:
    if len(row) != len(COLUMNS):
        raise IngestionError(f"expected {len(COLUMNS)} fields, got {len(row)}", row=index)
    try:
        child_id, visit, y = int(row[0]), int(row[1]), int(row[2])
        age, smoking = float(row[3]), int(row[4])
    except ValueError as exc:
        raise IngestionError(f"unparseable value ({exc})", row=index) from exc
    if y not in (0, 1):
        raise IngestionError(f"y must be 0 or 1, got {y}", row=index)
    if smoking not in (0, 1):
        raise IngestionError(f"smoking must be 0 or 1, got {smoking}", row=index)
    return child_id, visit, y, age, smoking


def load_sixcity(path: str | Path) -> SixCityData:
    """Load and validate a six-city CSV (header row required).

    Raises:
        IngestionError: unreadable or empty file, wrong arity, non-binary y,
            missing or duplicated visits, or smoking that changes within a child.
            Row numbers count data rows from 1.
    """
    path = Path(path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc.strerror or exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path} is empty")
        if tuple(h.strip() for h in header) != COLUMNS:
            raise IngestionError(f"header must be {','.join(COLUMNS)}, got {','.join(header)}")

        visits: dict[int, dict[int, tuple[int, float]]] = {}
        smoking: dict[int, int] = {}
        for index, row in enumerate(reader, start=1):
            if not row:
                continue
            child_id, visit, y, age, smoke = _parse(row, index)
            per_child = visits.setdefault(child_id, {})
            if visit in per_child:
                raise IngestionError(f"duplicate visit {visit} for id {child_id}", row=index)
            per_child[visit] = (y, age)
            if smoking.setdefault(child_id, smoke) != smoke:
                raise IngestionError(f"smoking changes within id {child_id}", row=index)

    if not visits:
        raise IngestionError(f"{path} has no data rows")

    n_visits = max(len(v) for v in visits.values())
    expected = set(range(1, n_visits + 1))
    ids = sorted(visits)
    for child_id in ids:
        if set(visits[child_id]) != expected:
            missing = sorted(expected - set(visits[child_id]))
            raise IngestionError(f"id {child_id} is missing visits {missing}")

    y = np.array([[visits[i][j][0] for j in sorted(expected)] for i in ids], dtype=np.int8)
    age = np.array([[visits[i][j][1] for j in sorted(expected)] for i in ids], dtype=float)
    smk = np.array([smoking[i] for i in ids], dtype=float)
    logger.info("loaded six-city data: %d children x %d visits from %s", len(ids), n_visits, path)
    return SixCityData(ids=ids, y=y, age=age, smoking=smk)


def synth_sixcity(
    theta_true: Sequence[float],
    seed: int,
    n_individuals: int = N_CHILDREN,
    ages: Sequence[float] = DEFAULT_AGES,
    smoking_rate: float = SMOKING_RATE,
) -> SixCityData:
    """Simulate a six-city-shaped table from the GLMM at θ = (β1, β2, β3, log τ²)."""
    theta = np.asarray(theta_true, dtype=float)
    rng = np.random.default_rng(seed)
    ages = np.asarray(ages, dtype=float)
    smoking = (rng.random(n_individuals) < smoking_rate).astype(float)
    tau = np.exp(0.5 * theta[3])
    alpha = tau * rng.standard_normal(n_individuals)
    age = np.tile(ages, (n_individuals, 1))
    eta = theta[0] + theta[1] * age + theta[2] * smoking[:, None] + alpha[:, None]
    y = (rng.random(eta.shape) < expit(eta)).astype(np.int8)
    return SixCityData(ids=list(range(1, n_individuals + 1)), y=y, age=age, smoking=smoking)


def write_sixcity(data: SixCityData, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for row, child_id in enumerate(data.ids):
            for j in range(data.n_visits):
                writer.writerow([
                    child_id,
                    j + 1,
                    int(data.y[row, j]),
                    repr(float(data.age[row, j])),
                    int(data.smoking[row]),
                ])
    return path
