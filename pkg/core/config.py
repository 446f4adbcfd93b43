# =============================================================================
# core/config.py  —  Run Configuration (TOML / JSON → frozen RunConfig)
# =============================================================================
#
# WHAT THIS MODULE DOES:
#   Turns a run file into a validated, immutable RunConfig.  A run file is a
#   mapping with these sections (TOML shown; JSON uses the same keys):
#
#     method = "sf_mlmc"            # sf_mlmc | rp_mlmc | vbil | vbsl
#     outer_samples = 100           # S
#     iterations = 500              # T
#     seed = 0
#     control_variates = true       # score-function methods only
#     skip_bad_draws = false        # resample draws whose log f is undefined
#     fresh_elbo = false            # ELBO from independent draws each iteration
#     threads = 1
#     log_every = 50
#     vbil_n = 16
#     vbsl_n = 50
#     tail_window = 50
#
#     [model]      name = "toy" | "gk" | "glmm" plus that model's settings
#     [levels]     alpha, M0, max_level
#     [optimizer]  kind = "robbins_monro" (a, b) | "adam" (step, beta1, beta2, eps)
#     [rqmc]       placement = "none" | "inner" | "outer" | "both"
#     [init]       mean, cov (or scale): starting q = N(mean, cov)
#     [stopping]   early_stop, window, tol, patience
#
#   Unknown keys are rejected so typos fail loudly.  A JSON run summary
#   written by report.py embeds its config under "config" and loads here too,
#   which is what `main.py replay` relies on.
#
# ENVIRONMENT DEFAULTS:
#   MLMCVB_OUT_DIR    where artifacts go            (default "runs")
#   MLMCVB_THREADS    worker threads per iteration  (default 1)
#   MLMCVB_LOG_LEVEL  logging level for the CLI     (default "INFO")
#   main.py loads a .env file first (python-dotenv), then reads these.
# =============================================================================

from __future__ import annotations

import json
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport with the same API
    import tomli as tomllib
import types
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import numpy as np

from core.errors import ConfigurationError
from core.mlmc import LevelDistribution
from core.models import Method, Placement, VbilConfig
from core.optimizers import Adam, RobbinsMonro

GLMM_THETA_TRUE = (-3.1, -0.18, 0.39, float(np.log(2.1 ** 2)))


@dataclass(frozen=True)
class ModelConfig:
    name: str = "toy"
    # toy
    n: int = 4
    h: float = 0.1
    y_star: Optional[tuple[float, ...]] = None
    # g-and-k
    T: int = 1000
    observed_summaries: Optional[tuple[float, ...]] = None
    observation_seed: int = 2024
    # glmm
    data_path: Optional[str] = None
    theta_true: tuple[float, ...] = GLMM_THETA_TRUE
    synthetic_seed: int = 537
    n_individuals: int = 537

    def __post_init__(self):
        if self.name not in ("toy", "gk", "glmm"):
            raise ConfigurationError(f"unknown model '{self.name}' (expected toy, gk or glmm)")
        if not self.h > 0.0:
            raise ConfigurationError(f"kernel bandwidth h must be positive, got {self.h}")
        if len(self.theta_true) != 4:
            raise ConfigurationError("theta_true must have 4 entries (beta1, beta2, beta3, log tau^2)")


@dataclass(frozen=True)
class LevelsConfig:
    alpha: float = 1.3
    M0: int = 1
    max_level: int = 20

    def distribution(self) -> LevelDistribution:
        return LevelDistribution(alpha=self.alpha, M0=self.M0, max_level=self.max_level)

    def __post_init__(self):
        self.distribution()


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "robbins_monro"
    a: float = 1.0
    b: float = 5.0
    step: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind == "robbins_monro":
            RobbinsMonro(self.a, self.b)
        elif self.kind == "adam":
            Adam(self.step, self.beta1, self.beta2, self.eps)
        else:
            raise ConfigurationError(f"unknown optimizer '{self.kind}' (expected robbins_monro or adam)")


@dataclass(frozen=True)
class RqmcConfig:
    placement: Placement = Placement.NONE


@dataclass(frozen=True)
class InitConfig:
    mean: Optional[tuple[float, ...]] = None
    cov: Optional[tuple[tuple[float, ...], ...]] = None
    scale: Optional[float] = None

    def __post_init__(self):
        if self.cov is not None and self.scale is not None:
            raise ConfigurationError("give either init.cov or init.scale, not both")
        if self.scale is not None and not self.scale > 0.0:
            raise ConfigurationError(f"init.scale must be positive, got {self.scale}")


@dataclass(frozen=True)
class StoppingConfig:
    early_stop: bool = False
    window: int = 50
    tol: float = 1e-3
    patience: int = 3

    def __post_init__(self):
        if self.window < 1 or self.patience < 1:
            raise ConfigurationError("stopping.window and stopping.patience must be >= 1")
        if self.tol < 0.0:
            raise ConfigurationError(f"stopping.tol must be >= 0, got {self.tol}")


@dataclass(frozen=True)
class RunConfig:
    method: Method = Method.SF_MLMC
    model: ModelConfig = field(default_factory=ModelConfig)
    levels: LevelsConfig = field(default_factory=LevelsConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    rqmc: RqmcConfig = field(default_factory=RqmcConfig)
    init: InitConfig = field(default_factory=InitConfig)
    stopping: StoppingConfig = field(default_factory=StoppingConfig)
    outer_samples: int = 100
    iterations: int = 500
    seed: int = 0
    control_variates: bool = True
    skip_bad_draws: bool = False
    fresh_elbo: bool = False
    threads: int = 1
    log_every: int = 50
    vbil_n: int = 16
    vbsl_n: int = 50
    tail_window: int = 50

    def __post_init__(self):
        if self.outer_samples < 1:
            raise ConfigurationError(f"outer_samples must be >= 1, got {self.outer_samples}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if self.seed < 0:
            raise ConfigurationError(f"seed must be non-negative, got {self.seed}")
        if self.threads < 1:
            raise ConfigurationError(f"threads must be >= 1, got {self.threads}")
        if self.log_every < 1 or self.tail_window < 1:
            raise ConfigurationError("log_every and tail_window must be >= 1")
        VbilConfig(N=self.vbil_n)
        if self.fresh_elbo and self.outer_samples < 2:
            raise ConfigurationError("fresh_elbo needs outer_samples >= 2")

    @property
    def placement(self) -> Placement:
        return self.rqmc.placement

    def with_overrides(self, **changes) -> "RunConfig":
        """Copy with top-level fields replaced (None values are ignored)."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


# =============================================================================
# Mapping ↔ RunConfig
# =============================================================================
_SECTIONS = {
    "model": ModelConfig,
    "levels": LevelsConfig,
    "optimizer": OptimizerConfig,
    "rqmc": RqmcConfig,
    "init": InitConfig,
    "stopping": StoppingConfig,
}


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _wrong_type(where: str, expected: str, value) -> ConfigurationError:
    return ConfigurationError(f"{where} must be {expected}, got {value!r}")


def _coerce(value, hint, where: str):
    """Check `value` against a field annotation; ints widen to floats."""
    origin = get_origin(hint)
    if origin in (Union, types.UnionType):
        if value is None:
            return None
        inner = [a for a in get_args(hint) if a is not type(None)]
        return _coerce(value, inner[0], where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise _wrong_type(where, "a list", value)
        item = get_args(hint)[0]
        return tuple(_coerce(v, item, where) for v in value)
    if isinstance(hint, type) and issubclass(hint, Enum):
        return _enum(hint, value, where)
    if hint is bool:
        if not isinstance(value, bool):
            raise _wrong_type(where, "true or false", value)
    elif hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise _wrong_type(where, "an integer", value)
    elif hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise _wrong_type(where, "a number", value)
        return float(value)
    elif hint is str and not isinstance(value, str):
        raise _wrong_type(where, "a string", value)
    return value


def _typed_kwargs(cls, data: dict, prefix: str) -> dict:
    hints = get_type_hints(cls)
    return {k: _coerce(_tupled(v), hints[k], f"{prefix}{k}") for k, v in data.items()}


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigurationError(f"[{where}] must be a table, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = _typed_kwargs(cls, data, f"{where}.")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(f"[{where}]: {exc}") from exc


def _enum(enum_cls, value, where: str):
    try:
        return enum_cls(str(value).lower())
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ConfigurationError(f"{where} must be one of {allowed}, got {value!r}") from None


def config_from_dict(data: dict) -> RunConfig:
    """Validate a plain mapping (parsed TOML / JSON) into a RunConfig."""
    if "config" in data and isinstance(data["config"], dict):
        data = data["config"]
    top = dict(data)
    kwargs: dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        if name in top:
            kwargs[name] = _build(cls, top.pop(name), name)
    if "method" in top:
        kwargs["method"] = _enum(Method, top.pop("method"), "method")
    known = {f.name for f in fields(RunConfig)} - set(_SECTIONS) - {"method"}
    unknown = sorted(set(top) - known)
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs.update(_typed_kwargs(RunConfig, top, ""))
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def _plain(value):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items() if v is not None}
    return value


def config_to_dict(config: RunConfig) -> dict:
    """JSON-ready mapping that config_from_dict() turns back into `config`."""
    return _plain(asdict(config))


def load_config(path: str | Path) -> RunConfig:
    """Read a .toml or .json run file (or a JSON run summary)."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".toml":
            data = tomllib.loads(text)
        elif path.suffix == ".json":
            data = json.loads(text)
        else:
            raise ConfigurationError(f"config must be .toml or .json, got {path.name}")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(data)


def env_defaults() -> dict:
    """Environment-level defaults (after .env loading)."""
    try:
        threads = int(os.environ.get("MLMCVB_THREADS", "1"))
    except ValueError as exc:
        raise ConfigurationError(f"MLMCVB_THREADS must be an integer: {exc}") from exc
    return {
        "out_dir": os.environ.get("MLMCVB_OUT_DIR", "runs"),
        "threads": threads,
        "log_level": os.environ.get("MLMCVB_LOG_LEVEL", "INFO").upper(),
    }
