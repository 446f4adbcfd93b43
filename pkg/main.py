# =============================================================================
# main.py  —  Command-Line Entry Point for the MLMC Variational-Bayes Engine
# =============================================================================
#
# HOW TO RUN:
#   uv run python main.py fit configs/toy_sf.toml
#   uv run python main.py fit configs/glmm_rp.toml --seed 3 --threads 4
#   uv run python main.py elbo configs/toy_sf.toml --samples 4000
#   uv run python main.py rates configs/gk_sf.toml --max-level 7
#   uv run python main.py variance configs/glmm_variance.toml --repetitions 50
#   uv run python main.py abc-ar --model toy --accepted 2000
#   uv run python main.py replay runs/toy_sf_mlmc_seed0/summary.json
#   uv run python main.py serve            # MCP tool server on stdio
#
# WHAT EACH SUBCOMMAND WRITES (under --out-dir, default $MLMCVB_OUT_DIR):
#   fit / replay   elbo_trace.csv, density_grid.csv, summary.json
#   elbo           prints ELBO ± SE (JSON) for the run file's initial q
#   rates          rates.csv  (log2 second moments per level, fitted r)
#   variance       variance.csv (gradient variance per RQMC placement)
#   abc-ar         abc_samples.csv
#
# EXIT CODES:
#   0  success
#   2  any MlmcVbError (bad config, undefined log-likelihood, bad data file,
#      ...): the message goes to stderr, no traceback.
# =============================================================================

import argparse
import json
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

# Environment defaults (MLMCVB_OUT_DIR, MLMCVB_THREADS, MLMCVB_LOG_LEVEL) may
# come from a .env file, so it has to be loaded before anything reads them.
load_dotenv()

from core import gaussian_family
from core.baselines import abc_ar
from core.config import ModelConfig, RunConfig, env_defaults, load_config
from core.diagnostics import rates_table, variance_table
from core.engine import initial_params, run
from core.errors import MlmcVbError
from core.estimators import estimate_elbo
from core.models import Method
from core.problems import ToyModel, build_model
from core.qmc import root_stream
from core.report import report, write_abc_csv, write_rates_csv, write_variance_csv

logger = logging.getLogger("mlmc_vb")


# =============================================================================
# Subcommands
# =============================================================================
def _overrides(config: RunConfig, args: argparse.Namespace, env: dict) -> RunConfig:
    threads = args.threads if args.threads is not None else (env["threads"] if env["threads"] > 1 else None)
    return config.with_overrides(seed=args.seed, iterations=getattr(args, "iterations", None), threads=threads)


def _toy_oracle(config: RunConfig):
    if config.model.name != "toy":
        return None
    return [build_model(config.model).abc_posterior()]


def cmd_fit(args: argparse.Namespace, env: dict) -> int:
    config = _overrides(load_config(args.config), args, env)
    trace = run(config)
    abc = None
    if args.abc_samples and config.model.name in ("toy", "gk"):
        abc = abc_ar(build_model(config.model), args.abc_samples, root_stream(config.seed + 1))
    out = Path(args.out_dir or env["out_dir"]) / f"{config.model.name}_{config.method.value}_seed{config.seed}"
    paths = report(trace, out, abc=abc, oracle=_toy_oracle(config))
    if abc is not None:
        paths["abc"] = str(write_abc_csv(abc, out / "abc_samples.csv"))
    if not args.quiet:
        print(json.dumps({"tail_elbo": trace.tail_elbo, "total_cost": trace.total_cost, **paths}, indent=2))
    return 0


def cmd_elbo(args: argparse.Namespace, env: dict) -> int:
    config = _overrides(load_config(args.config), args, env)
    model = build_model(config.model)
    kind = "rp" if config.method is Method.RP_MLMC else "sf"
    params = initial_params(config, model, kind)
    est = estimate_elbo(
        params, model, config.levels.distribution(), args.samples, config.placement,
        root_stream(config.seed), threads=config.threads,
    )
    result = {"elbo": est.value, "std_error": est.std_error, "samples": est.samples}
    if isinstance(model, ToyModel):
        var = float(gaussian_family.covariance(params)[0, 0])
        result["analytic_elbo"] = model.analytic_elbo(float(params.mu[0]), var)
    print(json.dumps(result, indent=2))
    return 0


def cmd_rates(args: argparse.Namespace, env: dict) -> int:
    config = _overrides(load_config(args.config), args, env)
    model = build_model(config.model)
    params = initial_params(config, model, "rp" if model.supports_rp else "sf")
    rows = rates_table(model, params, config.levels.distribution(), args.max_level, args.replicates, seed=config.seed)
    out = Path(args.out_dir or env["out_dir"]) / f"{config.model.name}_rates_seed{config.seed}"
    path = write_rates_csv(rows, out / "rates.csv")
    if not args.quiet:
        fitted = sorted({(row["kind"], row["inner"], row["r"]) for row in rows})
        for kind, inner, r in fitted:
            print(f"{kind:5s} {inner:14s} r = {r:.3f}   (alpha = {config.levels.alpha})")
        print(path)
    return 0


def cmd_variance(args: argparse.Namespace, env: dict) -> int:
    config = _overrides(load_config(args.config), args, env)
    table = variance_table(config, args.repetitions)
    out = Path(args.out_dir or env["out_dir"]) / f"{config.model.name}_variance_seed{config.seed}"
    path = write_variance_csv(table, out / "variance.csv")
    if not args.quiet:
        print("placement  " + "  ".join(f"{name:>10s}" for name in table.coordinates))
        for name, row in zip(table.placements, table.variances):
            print(f"{name:9s}  " + "  ".join(f"{v:10.3e}" for v in row))
        print(path)
    return 0


def cmd_abc(args: argparse.Namespace, env: dict) -> int:
    model_config = ModelConfig(name=args.model) if args.h is None else ModelConfig(name=args.model, h=args.h)
    seed = args.seed or 0
    sample = abc_ar(build_model(model_config), args.accepted, root_stream(seed))
    out = Path(args.out_dir or env["out_dir"]) / f"{args.model}_abc_seed{seed}"
    path = write_abc_csv(sample, out / "abc_samples.csv")
    if not args.quiet:
        print(f"accepted {sample.accepted} of {sample.proposed} "
              f"(rate {sample.acceptance_rate:.4f}) -> {path}")
    return 0


def cmd_serve(args: argparse.Namespace, env: dict) -> int:
    from tools.mcp_server import mcp

    mcp.run()
    return 0


# =============================================================================
# Argument parsing
# =============================================================================
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlmc-vb",
        description="Variational Bayes with unbiased multilevel Monte Carlo likelihood estimates.",
    )
    parser.add_argument("--out-dir", default=None, help="artifact directory (default $MLMCVB_OUT_DIR or ./runs)")
    parser.add_argument("--quiet", action="store_true", help="log warnings only, print nothing on success")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_common(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        return p

    fit = with_common(sub.add_parser("fit", help="run a variational fit from a run file"))
    fit.add_argument("config")
    fit.add_argument("--iterations", type=int, default=None)
    fit.add_argument("--abc-samples", type=int, default=0,
                     help="also draw this many exact ABC-posterior samples for the density grid")
    fit.set_defaults(handler=cmd_fit)

    replay = with_common(sub.add_parser("replay", help="re-run the config embedded in a summary.json"))
    replay.add_argument("config")
    replay.add_argument("--iterations", type=int, default=None)
    replay.set_defaults(handler=cmd_fit, abc_samples=0)

    elbo = with_common(sub.add_parser("elbo", help="estimate the ELBO at the run file's initial q"))
    elbo.add_argument("config")
    elbo.add_argument("--samples", type=int, default=1000)
    elbo.set_defaults(handler=cmd_elbo)

    rates = with_common(sub.add_parser("rates", help="decay-rate sweep of the level corrections"))
    rates.add_argument("config")
    rates.add_argument("--max-level", type=int, default=7)
    rates.add_argument("--replicates", type=int, default=200)
    rates.set_defaults(handler=cmd_rates)

    variance = with_common(sub.add_parser("variance", help="gradient variance per RQMC placement"))
    variance.add_argument("config")
    variance.add_argument("--repetitions", type=int, default=50)
    variance.set_defaults(handler=cmd_variance)

    abc = with_common(sub.add_parser("abc-ar", help="exact ABC-posterior draws by rejection"))
    abc.add_argument("--model", choices=("toy", "gk"), default="toy")
    abc.add_argument("--h", type=float, default=None)
    abc.add_argument("--accepted", type=int, default=1000)
    abc.set_defaults(handler=cmd_abc)

    serve = sub.add_parser("serve", help="run the MCP tool server on stdio")
    serve.set_defaults(handler=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        env = env_defaults()
    except MlmcVbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(
        level=logging.WARNING if args.quiet else env["log_level"],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
    )
    try:
        return args.handler(args, env)
    except MlmcVbError as exc:
        logger.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
