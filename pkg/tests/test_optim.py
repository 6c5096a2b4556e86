import numpy as np
import pytest

from core.errors import OptimizerError
from core.optim import AdamW, OptimizerState, adamw_step, lr_schedule
from core.params import ModelParams


def test_lr_schedule():
    assert lr_schedule(250, 500, 3e-6) == pytest.approx(1.5e-6)
    assert lr_schedule(500, 500, 3e-6) == pytest.approx(3e-6)
    assert lr_schedule(10000, 500, 3e-6) == pytest.approx(3e-6)
    assert lr_schedule(0, 500, 3e-6) == 0.0


def test_lr_schedule_rejects_bad_arguments():
    with pytest.raises(OptimizerError):
        lr_schedule(1, 0, 1e-3)
    with pytest.raises(OptimizerError):
        lr_schedule(-1, 10, 1e-3)


def test_zero_gradient_and_decay_leaves_params_unchanged():
    params = {'w': np.array([1.5, -2.0])}
    out = adamw_step(params, {'w': np.zeros(2)}, OptimizerState(weight_decay=0.0), lr=0.1)
    np.testing.assert_array_equal(out['w'], params['w'])


def test_decay_only_shrinks_by_factor():
    params = {'w': np.array([2.0])}
    out = adamw_step(params, {'w': np.zeros(1)}, OptimizerState(weight_decay=0.1), lr=0.5)
    assert out['w'][0] == pytest.approx(2.0 * (1 - 0.5 * 0.1))


def test_first_step_matches_hand_computation():
    state = OptimizerState(beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)
    theta, grad, lr = 1.0, 0.5, 0.1
    out = adamw_step({'w': np.array([theta])}, {'w': np.array([grad])}, state, lr)
    m_hat = (0.1 * grad) / (1 - 0.9)
    v_hat = (0.001 * grad ** 2) / (1 - 0.999)
    expected = theta * (1 - lr * 0.01) - lr * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert out['w'][0] == pytest.approx(expected, rel=1e-12)
    assert state.step == 1


def test_non_finite_gradient_aborts_before_any_change():
    state = OptimizerState()
    params = {'a': np.array([1.0]), 'b': np.array([2.0])}
    with pytest.raises(OptimizerError):
        adamw_step(params, {'a': np.array([0.1]), 'b': np.array([np.nan])}, state, lr=0.1)
    assert state.step == 0
    assert state.m == {} and state.v == {}


def test_invalid_state():
    with pytest.raises(OptimizerError):
        OptimizerState(beta1=1.0)
    with pytest.raises(OptimizerError):
        OptimizerState(eps=0.0)


def test_adamw_updates_model_params_in_their_dtype():
    params = ModelParams()
    w = params.add('w', (3,), np.random.default_rng(0))
    before = w.data.copy()
    w.grad = np.ones(3, dtype=np.float32)
    optimizer = AdamW(params)
    optimizer.step(1e-2)
    assert w.data.dtype == np.float32
    assert np.all(w.data < before)
    optimizer.zero_grad()
    assert w.grad is None


def test_zero_lr_step_leaves_params_unchanged():
    params = ModelParams()
    w = params.add('w', (4,), np.random.default_rng(0))
    before = w.data.copy()
    w.grad = np.ones(4, dtype=np.float32)
    AdamW(params).step(0.0)
    np.testing.assert_array_equal(w.data, before)


def test_parameters_without_gradient_are_left_alone():
    state = OptimizerState(weight_decay=0.1)
    params = {'a': np.array([1.0, 2.0]), 'b': np.array([3.0])}
    adamw_step(params, {'a': np.ones(2), 'b': np.ones(1)}, state, lr=0.1)
    out = adamw_step(params, {'a': np.ones(2)}, state, lr=0.1)
    assert out['b'] is params['b']
    assert out['a'][0] != params['a'][0]
    assert state.step == 2
