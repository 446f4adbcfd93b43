# =============================================================================
# tools/mcp_server.py  —  FastMCP Tool Server (fit, ELBO, diagnostics, ABC)
# =============================================================================
#
# WHAT THIS FILE DOES:
#   Exposes the engine as MCP tools.  Each tool is a thin wrapper around a
#   core/ function: it parses arguments, calls core, and returns a compact
#   dict.  Heavy outputs (traces, grids, tables) go to files under the output
#   directory; the tool returns their paths plus a short numeric summary.
#
# TOOLS:
#   describe_models          what each model supports (p, s, RP or not)
#   fit_variational          run a config file (optionally overriding seed /
#                            iterations) and write the run artifacts
#   estimate_elbo_at         ELBO ± SE at a given Gaussian q
#   decay_rates              level-correction decay sweep (MC vs RQMC inner)
#   placement_variances      gradient variance per RQMC placement
#   abc_rejection_sample     exact ABC-posterior draws by rejection
#
# ERRORS:
#   Tools never raise.  Any MlmcVbError becomes
#   {"error": <message>, "hint": <what to change>}.
#
# RUNNING THIS SERVER:
#   python -m tools.mcp_server      (stdio transport)
#   python main.py serve
# =============================================================================

import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from fastmcp import FastMCP

from core import gaussian_family
from core.baselines import abc_ar
from core.config import ModelConfig, env_defaults, load_config
from core.diagnostics import rates_table, variance_table
from core.engine import initial_params, run
from core.errors import CapabilityError, ConfigurationError, MlmcVbError
from core.estimators import estimate_elbo
from core.mlmc import LevelDistribution
from core.models import Placement
from core.problems import ToyModel, build_model
from core.qmc import root_stream
from core.report import report, write_abc_csv, write_rates_csv, write_variance_csv

# =============================================================================
# Logging Setup
# =============================================================================
# STDOUT carries the MCP protocol, so every log line goes to STDERR.
#   CYAN   incoming tool calls with parameters
#   YELLOW intermediate progress
#   GREEN  the response dict
# =============================================================================
_CYAN = "\033[36m"
_GREEN = "\033[32m"
_YELLOW = "\033[33m"
_RESET = "\033[0m"

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [MCP] %(message)s",
    datefmt="%H:%M:%S",
    stream=sys.stderr,
)


def _log_request(tool_name: str, **params) -> None:
    param_str = ", ".join(f"{k}={v!r}" for k, v in params.items())
    logging.info(f"{_CYAN}{tool_name} called with: {param_str}{_RESET}")


def _log_status(message: str) -> None:
    logging.info(f"{_YELLOW}  → {message}{_RESET}")


def _log_response(tool_name: str, result: dict) -> dict:
    logging.info(f"{_GREEN}  ← {tool_name} response: {json.dumps(result, separators=(',', ':'))}{_RESET}")
    return result


def _error(tool_name: str, exc: MlmcVbError) -> dict:
    if isinstance(exc, CapabilityError):
        hint = "This model has no gradient chain; use method 'sf_mlmc' (or 'vbil' / 'vbsl')."
    elif isinstance(exc, ConfigurationError):
        hint = "Check the argument values and the run file against configs/*.toml."
    else:
        hint = "Inspect the message; for undefined log-likelihood draws set skip_bad_draws = true."
    _log_status(f"{type(exc).__name__}: {exc}")
    return _log_response(tool_name, {"error": str(exc), "hint": hint})


def _out_dir(name: str) -> Path:
    return Path(env_defaults()["out_dir"]) / name


mcp = FastMCP("mlmc-vb")


# =============================================================================
# TOOL 1: describe_models
# =============================================================================
@mcp.tool()
def describe_models() -> dict:
    """List the built-in models and what each supports.

    Returns:
        A dict keyed by model name with p (parameter dimension),
        inner_dimension (uniforms per inner draw), n_groups and supports_rp.
    """
    _log_request("describe_models")
    out = {}
    for name in ("toy", "gk", "glmm"):
        try:
            out[name] = build_model(ModelConfig(name=name)).describe()
        except MlmcVbError as exc:
            out[name] = {"error": str(exc)}
    return _log_response("describe_models", out)


# =============================================================================
# TOOL 2: fit_variational
# =============================================================================
@mcp.tool()
def fit_variational(
    config_path: str,
    seed: Optional[int] = None,
    iterations: Optional[int] = None,
    threads: Optional[int] = None,
) -> dict:
    """Run a variational fit from a TOML/JSON run file and write its artifacts.

    Args:
        config_path: Path to a run file (e.g. "configs/toy_sf.toml") or a
            summary.json from an earlier run.
        seed: Optional seed override.
        iterations: Optional iteration-count override.
        threads: Optional worker-thread override.

    Returns:
        A dict with the tail-window ELBO, final mean and marginal sd of q,
        total inner-sample cost and the paths of the written artifacts.
    """
    _log_request("fit_variational", config_path=config_path, seed=seed,
                 iterations=iterations, threads=threads)
    try:
        config = load_config(config_path).with_overrides(
            seed=seed, iterations=iterations, threads=threads
        )
        _log_status(f"method={config.method.value} model={config.model.name} T={config.iterations}")
        trace = run(config)
        oracle = None
        if config.model.name == "toy":
            toy = build_model(config.model)
            oracle = [toy.abc_posterior()]
        out = _out_dir(f"{config.model.name}_{config.method.value}_seed{config.seed}")
        paths = report(trace, out, oracle=oracle)
    except MlmcVbError as exc:
        return _error("fit_variational", exc)
    params = trace.final_params
    return _log_response("fit_variational", {
        "tail_elbo": trace.tail_elbo,
        "final_mean": params.mu.tolist(),
        "final_sd": gaussian_family.marginal_sd(params).tolist(),
        "iterations": len(trace.records),
        "total_cost": trace.total_cost,
        "stopped_early": trace.stopped_early,
        "artifacts": paths,
    })


# =============================================================================
# TOOL 3: estimate_elbo_at
# =============================================================================
@mcp.tool()
def estimate_elbo_at(
    mean: list[float],
    sd: list[float],
    model: str = "toy",
    samples: int = 1000,
    alpha: float = 1.3,
    M0: int = 1,
    placement: str = "none",
    seed: int = 0,
) -> dict:
    """Unbiased ELBO estimate at q = N(mean, diag(sd²)).

    Args:
        mean: Mean vector of q (length p of the model).
        sd: Marginal standard deviations of q (same length).
        model: "toy", "gk" or "glmm" (default settings).
        samples: Outer draws S (>= 2).
        alpha, M0: Level law w_l ∝ 2^(-alpha·l), inner sizes M0·2^l.
        placement: "none", "inner", "outer" or "both".
        seed: Stream seed.

    Returns:
        {"elbo", "std_error", "samples"}; for the toy model also the exact
        ELBO of the same q ("analytic_elbo").
    """
    _log_request("estimate_elbo_at", mean=mean, sd=sd, model=model, samples=samples,
                 alpha=alpha, M0=M0, placement=placement, seed=seed)
    try:
        model_spec = build_model(ModelConfig(name=model))
        if len(mean) != model_spec.p or len(sd) != model_spec.p:
            raise ConfigurationError(f"model '{model}' needs mean and sd of length {model_spec.p}")
        cov = np.diag(np.asarray(sd, dtype=float) ** 2)
        params = gaussian_family.from_moments("rp", np.asarray(mean, dtype=float), cov)
        est = estimate_elbo(
            params, model_spec, LevelDistribution(alpha=alpha, M0=M0), samples,
            Placement(placement), root_stream(seed),
        )
    except (MlmcVbError, ValueError) as exc:
        if not isinstance(exc, MlmcVbError):
            exc = ConfigurationError(str(exc))
        return _error("estimate_elbo_at", exc)
    result = {"elbo": est.value, "std_error": est.std_error, "samples": est.samples}
    if isinstance(model_spec, ToyModel):
        result["analytic_elbo"] = model_spec.analytic_elbo(float(mean[0]), float(sd[0]) ** 2)
    return _log_response("estimate_elbo_at", result)


# =============================================================================
# TOOL 4: decay_rates
# =============================================================================
@mcp.tool()
def decay_rates(
    config_path: str,
    max_level: int = 7,
    replicates: int = 200,
) -> dict:
    """Fit the decay rate r of the level corrections for MC and RQMC inner draws.

    Uses the run file's model, level law and initial q.  r must exceed the
    level-law alpha for the single-term estimator to have finite variance.

    Returns:
        {"rates": {"<kind>/<inner>": r, ...}, "alpha": alpha, "csv": path}
    """
    _log_request("decay_rates", config_path=config_path, max_level=max_level, replicates=replicates)
    try:
        config = load_config(config_path)
        model = build_model(config.model)
        params = initial_params(config, model, "rp" if model.supports_rp else "sf")
        rows = rates_table(model, params, config.levels.distribution(), max_level, replicates, seed=config.seed)
        path = write_rates_csv(rows, _out_dir(f"{config.model.name}_rates") / "rates.csv")
    except MlmcVbError as exc:
        return _error("decay_rates", exc)
    rates = {f"{row['kind']}/{row['inner']}": row["r"] for row in rows}
    return _log_response("decay_rates", {"rates": rates, "alpha": config.levels.alpha, "csv": str(path)})


# =============================================================================
# TOOL 5: placement_variances
# =============================================================================
@mcp.tool()
def placement_variances(config_path: str, repetitions: int = 50) -> dict:
    """Gradient-estimator variance per coordinate for each RQMC placement.

    Returns:
        {"coordinates": [...], "variances": {placement: [...]},
         "reduced_vs_none": {placement: number of coordinates below NONE},
         "csv": path}
    """
    _log_request("placement_variances", config_path=config_path, repetitions=repetitions)
    try:
        config = load_config(config_path)
        table = variance_table(config, repetitions)
        path = write_variance_csv(table, _out_dir(f"{config.model.name}_variance") / "variance.csv")
    except MlmcVbError as exc:
        return _error("placement_variances", exc)
    baseline = table.row("none")
    return _log_response("placement_variances", {
        "coordinates": table.coordinates,
        "variances": {p: table.row(p).tolist() for p in table.placements},
        "reduced_vs_none": {p: int(np.sum(table.row(p) <= baseline)) for p in table.placements if p != "none"},
        "csv": str(path),
    })


# =============================================================================
# TOOL 6: abc_rejection_sample
# =============================================================================
@mcp.tool()
def abc_rejection_sample(
    model: str = "toy",
    h: Optional[float] = None,
    n_accepted: int = 1000,
    seed: int = 0,
) -> dict:
    """Exact ABC-posterior samples by kernel-ratio acceptance-rejection.

    Args:
        model: "toy" or "gk".
        h: Kernel bandwidth (model default when omitted).
        n_accepted: Number of accepted draws to return.
        seed: Stream seed.

    Returns:
        {"accepted", "proposed", "acceptance_rate", "mean", "sd", "csv"}
    """
    _log_request("abc_rejection_sample", model=model, h=h, n_accepted=n_accepted, seed=seed)
    try:
        model_config = ModelConfig(name=model) if h is None else ModelConfig(name=model, h=h)
        sample = abc_ar(build_model(model_config), n_accepted, root_stream(seed))
        path = write_abc_csv(sample, _out_dir(f"{model}_abc_seed{seed}") / "abc_samples.csv")
    except MlmcVbError as exc:
        return _error("abc_rejection_sample", exc)
    _log_status(f"acceptance rate {sample.acceptance_rate:.4f}")
    return _log_response("abc_rejection_sample", {
        "accepted": sample.accepted,
        "proposed": sample.proposed,
        "acceptance_rate": sample.acceptance_rate,
        "mean": sample.thetas.mean(axis=0).tolist(),
        "sd": sample.thetas.std(axis=0, ddof=1).tolist() if sample.accepted > 1 else None,
        "csv": str(path),
    })


if __name__ == "__main__":
    mcp.run()
