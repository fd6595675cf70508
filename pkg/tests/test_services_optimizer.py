import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.core.exceptions import ContractViolation, NumericError
from app.schemas.optimizer import OptimizerConfig
from app.services.autodiff import Tensor
from app.services.optimizer import adam_step, init_state, one_cycle_lr


def test_one_cycle_endpoints():
    config = OptimizerConfig(max_lr=1e-3, total_steps=100)
    assert one_cycle_lr(0, config) == pytest.approx(1e-3 / 25)
    assert one_cycle_lr(config.warmup_steps, config) == 1e-3
    assert one_cycle_lr(100, config) == pytest.approx(1e-3 / 1e4)


def test_one_cycle_peak_is_max_and_schedule_continuous():
    config = OptimizerConfig(max_lr=1e-5, total_steps=600)
    lrs = [one_cycle_lr(t, config) for t in range(601)]
    assert max(lrs) == 1e-5
    assert config.warmup_steps == 180
    steps = np.abs(np.diff(lrs))
    assert steps.max() < 1e-5 * 0.02


def test_one_cycle_rejects_out_of_range_step():
    config = OptimizerConfig(total_steps=10)
    with pytest.raises(ContractViolation):
        one_cycle_lr(-1, config)
    with pytest.raises(ContractViolation):
        one_cycle_lr(11, config)


def test_cycle_fractions_must_sum_to_one():
    with pytest.raises(ValidationError):
        OptimizerConfig(cycle_fractions=(0.5, 0.6))


def test_adam_first_step_example():
    theta = Tensor([1.0], requires_grad=True)
    config = OptimizerConfig(weight_decay=0.0)
    state = adam_step([theta], [np.array([1.0])], init_state([theta]), 0.1, config)
    assert theta.data[0] == pytest.approx(0.9, abs=1e-6)
    assert state.t == 1
    assert state.history == [0.1]


def test_adam_zero_gradient_without_decay_is_noop():
    theta = Tensor([0.5, -2.0], requires_grad=True)
    config = OptimizerConfig(weight_decay=0.0)
    state = init_state([theta])
    for _ in range(5):
        adam_step([theta], [np.zeros(2)], state, 0.01, config)
    assert np.array_equal(theta.data, [0.5, -2.0])


def test_adam_decoupled_decay_shrinks():
    theta = Tensor([2.0], requires_grad=True)
    config = OptimizerConfig(weight_decay=0.1)
    adam_step([theta], [np.zeros(1)], init_state([theta]), 0.5, config)
    assert theta.data[0] == pytest.approx(2.0 * (1 - 0.5 * 0.1))


def test_adam_zero_lr_is_bit_identical(rng):
    theta = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    start = theta.data.copy()
    state = init_state([theta])
    config = OptimizerConfig()
    for _ in range(10):
        adam_step([theta], [rng.normal(size=(3, 2))], state, 0.0, config)
    assert np.array_equal(theta.data, start)
    assert state.t == 10


def test_adam_is_deterministic():
    def trajectory():
        rng = np.random.default_rng(4)
        theta = Tensor(np.ones(3), requires_grad=True)
        state = init_state([theta])
        for _ in range(20):
            adam_step([theta], [rng.normal(size=3)], state, 1e-2, OptimizerConfig())
        return theta.data.copy()

    assert np.array_equal(trajectory(), trajectory())


def test_adam_rejects_non_finite_gradients():
    theta = Tensor([1.0], requires_grad=True)
    state = init_state([theta])
    with pytest.raises(NumericError) as exc:
        adam_step([theta], [np.array([math.nan])], state, 0.1, OptimizerConfig())
    assert exc.value.step == 1
    assert state.t == 0
    assert theta.data[0] == 1.0


def test_single_step_cycle_starts_low():
    config = OptimizerConfig(max_lr=1.0, total_steps=1)
    assert config.warmup_steps == 1
    assert one_cycle_lr(0, config) == pytest.approx(1.0 / 25)
    assert one_cycle_lr(1, config) == 1.0
