import numpy as np
import pytest

from core.config import OptimizerConfig
from core.errors import ConfigurationError
from core.optimizers import Adam, RobbinsMonro, build_optimizer


def test_robbins_monro_schedule():
    rm = RobbinsMonro(a=1.0, b=5.0)
    assert rm.rate(0) == pytest.approx(0.2)
    assert rm.rate(95) == pytest.approx(0.01)
    assert np.allclose(rm.step(5, np.array([1.0, -2.0])), [0.1, -0.2])


@pytest.mark.parametrize("a, b", [(0.0, 5.0), (1.0, 0.0), (-1.0, 1.0)])
def test_robbins_monro_needs_positive_constants(a, b):
    with pytest.raises(ConfigurationError):
        RobbinsMonro(a, b)


def test_adam_first_step_is_signed_step_size():
    adam = Adam(step=0.05)
    step = adam.step(0, np.array([3.0, -0.001, 0.0]))
    assert np.allclose(step, [0.05, -0.05, 0.0], atol=1e-6)


def test_adam_keeps_moment_state():
    adam = Adam(step=0.1)
    adam.step(0, np.array([1.0]))
    second = adam.step(1, np.array([-1.0]))
    # m_hat ≈ (0.09 - 0.1) / 0.19 is small relative to sqrt(v_hat) ≈ 1.
    assert abs(second[0]) < 0.01


@pytest.mark.parametrize(
    "kwargs", [{"step": 0.0}, {"beta1": 1.0}, {"beta2": -0.1}, {"eps": 0.0}]
)
def test_adam_validation(kwargs):
    with pytest.raises(ConfigurationError):
        Adam(**kwargs)


def test_build_optimizer():
    assert isinstance(build_optimizer(OptimizerConfig()), RobbinsMonro)
    adam = build_optimizer(OptimizerConfig(kind="adam", step=0.02))
    assert isinstance(adam, Adam) and adam.step_size == 0.02
    with pytest.raises(ConfigurationError):
        OptimizerConfig(kind="sgd")
