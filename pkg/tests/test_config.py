import json

import pytest

from core.config import (
    GLMM_THETA_TRUE,
    ModelConfig,
    RunConfig,
    config_from_dict,
    config_to_dict,
    env_defaults,
    load_config,
)
from core.errors import ConfigurationError
from core.models import Method, Placement


def test_every_shipped_config_loads(configs_dir):
    paths = sorted(configs_dir.glob("*.toml"))
    assert paths
    for path in paths:
        assert isinstance(load_config(path), RunConfig)


def test_toy_sf_config_values(configs_dir):
    config = load_config(configs_dir / "toy_sf.toml")
    assert config.method is Method.SF_MLMC
    assert (config.outer_samples, config.iterations) == (100, 500)
    assert (config.levels.alpha, config.levels.M0) == (1.3, 1)
    assert (config.optimizer.a, config.optimizer.b) == (1.0, 5.0)
    assert config.placement is Placement.NONE


def test_glmm_config_values(configs_dir):
    config = load_config(configs_dir / "glmm_rp.toml")
    assert config.method is Method.RP_MLMC
    assert config.placement is Placement.BOTH
    assert config.model.theta_true == GLMM_THETA_TRUE
    assert config.init.mean == (0.0, 0.0, 0.0, 0.0)


def test_defaults():
    config = config_from_dict({})
    assert config == RunConfig()
    assert config.control_variates and not config.fresh_elbo


@pytest.mark.parametrize(
    "data, fragment",
    [
        ({"outer_samples": 10, "iteratons": 5}, "iteratons"),
        ({"model": {"name": "toy", "bandwidth": 0.1}}, "bandwidth"),
        ({"method": "mcmc"}, "method"),
        ({"rqmc": {"placement": "middle"}}, "placement"),
        ({"model": {"name": "probit"}}, "unknown model"),
        ({"model": {"h": 0.0}}, "bandwidth"),
        ({"optimizer": {"kind": "robbins_monro", "a": 0.0}}, "a, b > 0"),
        ({"optimizer": {"kind": "sgd"}}, "optimizer"),
        ({"fresh_elbo": True, "outer_samples": 1}, "fresh_elbo"),
        ({"init": {"cov": [[1.0]], "scale": 2.0}}, "init"),
        ({"levels": {"alpha": 0.0}}, "alpha"),
        ({"model": "toy"}, "table"),
        ({"seed": -1}, "seed"),
        ({"outer_samples": "100"}, "outer_samples must be an integer"),
        ({"control_variates": "yes"}, "control_variates must be true or false"),
        ({"levels": {"alpha": "1.3"}}, "levels.alpha must be a number"),
        ({"levels": {"M0": 2.5}}, "levels.M0 must be an integer"),
        ({"init": {"mean": 0.0}}, "init.mean must be a list"),
        ({"init": {"cov": [["1"]]}}, "init.cov must be a number"),
        ({"model": {"name": 3}}, "model.name must be a string"),
    ],
)
def test_invalid_configs(data, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        config_from_dict(data)


def test_placement_is_case_insensitive():
    assert config_from_dict({"rqmc": {"placement": "BOTH"}}).placement is Placement.BOTH


def test_dict_round_trip(configs_dir):
    for name in ("toy_sf.toml", "glmm_rp.toml", "gk_sf.toml"):
        config = load_config(configs_dir / name)
        assert config_from_dict(json.loads(json.dumps(config_to_dict(config)))) == config


def test_summary_files_load_as_configs(tmp_path, configs_dir):
    config = load_config(configs_dir / "toy_rp.toml")
    path = tmp_path / "summary.json"
    path.write_text(json.dumps({"method": "rp_mlmc", "tail_elbo": -1.0, "config": config_to_dict(config)}))
    assert load_config(path) == config


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigurationError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    bad_suffix = tmp_path / "run.yaml"
    bad_suffix.write_text("method: sf_mlmc\n")
    with pytest.raises(ConfigurationError, match=".toml or .json"):
        load_config(bad_suffix)
    broken = tmp_path / "run.toml"
    broken.write_text("method = \n")
    with pytest.raises(ConfigurationError, match="cannot parse"):
        load_config(broken)


def test_with_overrides_ignores_none():
    config = RunConfig().with_overrides(seed=3, iterations=None)
    assert config.seed == 3 and config.iterations == RunConfig().iterations


def test_model_config_checks_theta_length():
    with pytest.raises(ConfigurationError):
        ModelConfig(name="glmm", theta_true=(0.0, 1.0))


def test_env_defaults(monkeypatch):
    monkeypatch.delenv("MLMCVB_OUT_DIR", raising=False)
    monkeypatch.setenv("MLMCVB_THREADS", "4")
    monkeypatch.setenv("MLMCVB_LOG_LEVEL", "debug")
    assert env_defaults() == {"out_dir": "runs", "threads": 4, "log_level": "DEBUG"}
    monkeypatch.setenv("MLMCVB_THREADS", "many")
    with pytest.raises(ConfigurationError):
        env_defaults()


def test_integers_widen_to_floats():
    config = config_from_dict({"model": {"h": 5, "y_star": [0, 1, 0, 0]}, "init": {"cov": [[2]]}})
    assert config.model.h == 5.0 and isinstance(config.model.h, float)
    assert config.model.y_star == (0.0, 1.0, 0.0, 0.0)
    assert config.init.cov == ((2.0,),)


def test_string_numbers_in_run_files_are_rejected(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('outer_samples = "100"\n')
    with pytest.raises(ConfigurationError, match="outer_samples"):
        load_config(path)
