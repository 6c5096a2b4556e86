import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.errors import ShapeError
from core.loss import pair_probabilities, pair_probability_tensor, preference_loss
from core.tensor import ComputeGraph, Tensor, backward

probability = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


def test_pair_probabilities():
    assert pair_probabilities(0.3, 0.3) == (0.5, 0.5)
    p1, p2 = pair_probabilities(math.log(3.0), 0.0)
    assert p1 == pytest.approx(0.75) and p2 == pytest.approx(0.25)
    assert pair_probabilities(2.0, -1.0) == tuple(reversed(pair_probabilities(-1.0, 2.0)))
    assert pair_probabilities(1000.0, 0.0)[0] == pytest.approx(1.0)


def test_hand_examples():
    assert preference_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0]])).item() == pytest.approx(math.log(2), abs=1e-4)
    expected = 0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1)
    value = preference_loss(np.array([[0.9, 0.1]]), np.array([[0.5, 0.5]])).item()
    assert value == pytest.approx(expected, abs=1e-4)
    assert value == pytest.approx(0.5108, abs=1e-4)


@settings(max_examples=300, deadline=None)
@given(p=probability, q=st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_kl_non_negative(p, q):
    loss = preference_loss(np.array([[q, 1 - q]]), np.array([[p, 1 - p]])).item()
    assert loss >= -1e-9


@settings(max_examples=200, deadline=None)
@given(p=st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_kl_zero_at_label(p):
    labels = np.array([[p, 1 - p]], dtype=np.float64)
    assert abs(preference_loss(Tensor(labels), labels).item()) < 1e-9


def test_kl_non_negative_on_many_random_pairs():
    rng = np.random.default_rng(0)
    p = rng.random(10000)
    q = np.clip(rng.random(10000), 1e-6, 1 - 1e-6)
    for i in range(0, 10000, 1000):
        labels = np.stack([p[i:i + 1000], 1 - p[i:i + 1000]], axis=-1)
        predicted = np.stack([q[i:i + 1000], 1 - q[i:i + 1000]], axis=-1)
        per_pair = [preference_loss(predicted[j:j + 1], labels[j:j + 1]).item() for j in range(0, 1000, 97)]
        assert min(per_pair) >= -1e-9


def test_zero_log_zero_is_zero():
    loss = preference_loss(np.array([[1.0 - 1e-7, 1e-7]]), np.array([[1.0, 0.0]])).item()
    assert loss == pytest.approx(0.0, abs=1e-6)


def test_averaged_over_batch_and_summed_over_conditions():
    predicted = np.array([[[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]])
    labels = np.array([[[1.0, 0.0], [0.5, 0.5]], [[0.0, 1.0], [1.0, 0.0]]])
    assert preference_loss(predicted, labels).item() == pytest.approx(1.5 * math.log(2))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        preference_loss(np.array([[0.5, 0.5]]), np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ShapeError):
        pair_probability_tensor(Tensor(np.zeros((2, 3))))


def test_gradient_wrt_scores():
    scores = Tensor(np.array([[0.2, -0.4]]), requires_grad=True, dtype=np.float64)
    labels = np.array([[1.0, 0.0]])
    with ComputeGraph() as graph:
        loss = preference_loss(pair_probability_tensor(scores), labels)
    backward(loss, graph)
    p1 = pair_probabilities(0.2, -0.4)[0]
    np.testing.assert_allclose(scores.grad, [[p1 - 1.0, 1.0 - p1]], atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(p=probability, q=st.floats(min_value=1e-6, max_value=1 - 1e-6),
       r=probability, s=st.floats(min_value=1e-6, max_value=1 - 1e-6))
def test_swapping_both_images_leaves_loss_unchanged(p, q, r, s):
    predicted = np.array([[[q, 1 - q], [s, 1 - s]]])
    labels = np.array([[[p, 1 - p], [r, 1 - r]]])
    loss = preference_loss(predicted, labels).item()
    swapped = preference_loss(predicted[..., ::-1].copy(), labels[..., ::-1].copy()).item()
    assert abs(loss - swapped) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(s1=st.floats(-30, 30), s2=st.floats(-30, 30), shift=st.floats(-500, 500))
def test_pair_probabilities_ignore_common_shift(s1, s2, shift):
    p1, p2 = pair_probabilities(s1, s2)
    q1, q2 = pair_probabilities(s1 + shift, s2 + shift)
    assert q1 == pytest.approx(p1, abs=1e-9) and q2 == pytest.approx(p2, abs=1e-9)
    assert p1 + p2 == pytest.approx(1.0, abs=1e-12)
