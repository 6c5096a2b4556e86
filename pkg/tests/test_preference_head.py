import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core import tensor as T
from core.params import ModelParams
from core.preference_head import (ConditionParams, CrossAttentionParams, PreferenceHead, binarize_mask,
                                  build_condition_mask, masked_cross_attention, relevance, score_from_rows)
from core.tensor import ComputeGraph, Tensor, backward


def _t(values):
    return Tensor(np.asarray(values, dtype=np.float64))


def _condition(w_c, b_c, **kwargs):
    return ConditionParams(w_c=_t(w_c), b_c=_t([b_c]), **kwargs)


def _cross(width, heads, rng, alpha=1.0):
    return CrossAttentionParams(*(Tensor(rng.normal(size=(width, width))) for _ in range(3)),
                                heads=heads, alpha=_t([alpha]))


def test_relevance_identity():
    r = relevance(_t([[[1.0, 0.0]]]), _t([[[1.0, 0.0], [0.0, 1.0]]]), _condition(np.eye(2), 0.0))
    np.testing.assert_array_equal(r.data, [[[1.0, 0.0]]])


def test_relevance_zero_map():
    r = relevance(_t(np.ones((1, 3, 4))), _t(np.ones((1, 5, 4))), _condition(np.zeros((4, 4)), 0.3))
    np.testing.assert_allclose(r.data, 0.3)


def test_relevance_matches_loop():
    rng = np.random.default_rng(0)
    x_c, x_t, w = rng.normal(size=(3, 8)), rng.normal(size=(5, 8)), rng.normal(size=(8, 8))
    expected = np.array([[sum(x_c[i, a] * w[a, b] * x_t[j, b] for a in range(8) for b in range(8))
                          for j in range(5)] for i in range(3)])
    r = relevance(_t(x_c[None]), _t(x_t[None]), _condition(w, 0.0))
    np.testing.assert_allclose(r.data[0], expected, atol=1e-6)


def test_condition_mask_mean():
    m_c = build_condition_mask(_t([[1.0, 3.0], [3.0, 5.0]]), 2)
    np.testing.assert_array_equal(m_c.data, [[2.0, 4.0], [2.0, 4.0]])
    one = build_condition_mask(_t([[0.5, -1.0]]), 3)
    np.testing.assert_array_equal(one.data, [[0.5, -1.0]] * 3)


def test_binarize():
    assert binarize_mask(_t([[0.2, 0.8]]), 0.5).data.tolist() == [[-math.inf, 0.0]]
    assert np.all(binarize_mask(_t([[0.2, 0.8]]), -math.inf).data == 0.0)
    assert np.all(np.isneginf(binarize_mask(_t([[0.2, 0.8]]), 1e9).data))


def test_zero_mask_equals_plain_attention():
    rng = np.random.default_rng(1)
    x_v, x_t = _t(rng.normal(size=(1, 3, 4))), _t(rng.normal(size=(1, 5, 4)))
    cap = _cross(4, 2, rng)
    masked = masked_cross_attention(x_v, x_t, _t(np.zeros((1, 3, 5))), cap)
    plain = masked_cross_attention(x_v, x_t, None, cap)
    np.testing.assert_allclose(masked.fused.data, plain.fused.data, atol=1e-6)


def test_single_survivor_copies_value_row():
    rng = np.random.default_rng(2)
    x_v, x_t = _t(rng.normal(size=(1, 3, 4))), _t(rng.normal(size=(1, 5, 4)))
    cap = _cross(4, 1, rng)
    mask = np.full((1, 3, 5), -np.inf)
    mask[..., 2] = 0.0
    out = masked_cross_attention(x_v, x_t, _t(mask), cap)
    value_row = x_t.data[0, 2] @ cap.w_v.data
    np.testing.assert_allclose(out.fused.data[0], np.tile(value_row, (3, 1)), atol=1e-6)


def test_hand_rolled_oracle():
    rng = np.random.default_rng(3)
    x_v, x_t = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    cap = _cross(3, 1, rng)
    mask = np.zeros((1, 2, 3))
    mask[..., 1] = -np.inf
    out = masked_cross_attention(_t(x_v[None]), _t(x_t[None]), _t(mask), cap)
    q, k, v = x_v @ cap.w_q.data, x_t @ cap.w_k.data, x_t @ cap.w_v.data
    logits = q @ k.T / math.sqrt(3)
    weights = np.exp(logits) * np.array([1.0, 0.0, 1.0])
    weights /= weights.sum(axis=1, keepdims=True)
    np.testing.assert_allclose(out.fused.data[0], weights @ v, atol=1e-6)


@settings(max_examples=1000, deadline=None)
@given(b=st.integers(1, 3), n_v=st.integers(1, 6), n_p=st.integers(1, 7), heads=st.sampled_from([1, 2, 4]),
       seed=st.integers(0, 2 ** 16))
def test_masked_columns_get_zero_attention(b, n_v, n_p, heads, seed):
    rng = np.random.default_rng(seed)
    width = 4 * heads
    x_v, x_t = _t(rng.normal(size=(b, n_v, width))), _t(rng.normal(size=(b, n_p, width)))
    mask = np.where(rng.random((b, n_v, n_p)) < 0.5, -np.inf, 0.0)
    out = masked_cross_attention(x_v, x_t, _t(mask), _cross(width, heads, rng))
    for i in range(b):
        for row in range(n_v):
            weights = out.attention[i, :, row]
            if row in out.fallback_rows[i]:
                assert np.all(np.isneginf(mask[i, row]))
                continue
            assert np.all(weights[:, np.isneginf(mask[i, row])] == 0.0)
            np.testing.assert_allclose(weights.sum(axis=-1), 1.0, atol=1e-6)


def test_fully_masked_rows_fall_back():
    rng = np.random.default_rng(4)
    x_v, x_t = _t(rng.normal(size=(1, 3, 4))), _t(rng.normal(size=(1, 5, 4)))
    cap = _cross(4, 2, rng)
    out = masked_cross_attention(x_v, x_t, _t(np.full((1, 3, 5), -np.inf)), cap)
    plain = masked_cross_attention(x_v, x_t, None, cap)
    assert out.fallback_rows == [{0, 1, 2}]
    np.testing.assert_array_equal(out.fused.data, plain.fused.data)


def test_padding_columns_ignored():
    rng = np.random.default_rng(5)
    x_v, x_t = _t(rng.normal(size=(1, 3, 4))), _t(rng.normal(size=(1, 5, 4)))
    cap = _cross(4, 2, rng)
    padded = masked_cross_attention(x_v, x_t, None, cap, lengths=np.array([3]))
    short = masked_cross_attention(x_v, _t(x_t.data[:, :3]), None, cap)
    assert np.all(padded.attention[..., 3:] == 0.0)
    np.testing.assert_allclose(padded.fused.data, short.fused.data, atol=1e-9)
    np.testing.assert_allclose(padded.f_t.data, x_t.data[:, 2:3], atol=0)


def test_score_linear_in_alpha():
    rng = np.random.default_rng(6)
    f_vt, f_t = _t(rng.normal(size=(2, 1, 4))), _t(rng.normal(size=(2, 1, 4)))
    assert np.all(score_from_rows(f_vt, f_t, _t([0.0])).data == 0.0)
    once = score_from_rows(f_vt, f_t, _t([1.5])).data
    twice = score_from_rows(f_vt, f_t, _t([3.0])).data
    np.testing.assert_array_equal(twice, 2 * once)


def _head(mask_mode='hard', threshold=0.0, straight_through=True, fusion='cross_attention'):
    params = ModelParams(np.float64)
    head = PreferenceHead(params, 8, 2, np.random.default_rng(0), threshold=threshold, mask_mode=mask_mode,
                          straight_through=straight_through, fusion=fusion)
    return params, head


def _inputs(seed=7):
    rng = np.random.default_rng(seed)
    return (_t(rng.normal(size=(2, 5, 8))), _t(rng.normal(size=(2, 6, 8))), _t(rng.normal(size=(1, 4, 8))),
            np.array([6, 4]))


def test_threshold_neg_inf_equals_mask_off():
    x_v, x_t, x_c, lengths = _inputs()
    _, hard = _head(threshold=-math.inf)
    _, off = _head(mask_mode='off')
    masked, _ = hard(x_v, x_t, x_c, lengths)
    plain, _ = off(x_v, x_t, None, lengths)
    np.testing.assert_allclose(masked.data, plain.data, atol=1e-6)


def test_straight_through_reaches_condition_weights():
    x_v, x_t, x_c, lengths = _inputs()
    for straight_through, expect_grad in ((True, True), (False, False)):
        params, head = _head(threshold=0.0, straight_through=straight_through)
        with ComputeGraph() as graph:
            scores, _ = head(x_v, x_t, x_c, lengths)
            loss = T.sum(scores)
        backward(loss, graph)
        has_grad = params['head.w_c'].grad is not None and np.any(params['head.w_c'].grad != 0)
        assert has_grad == expect_grad


def test_base_fusion_is_cls_dot_eos():
    x_v, x_t, _, lengths = _inputs()
    _, head = _head(fusion='base')
    scores, fusion = head(x_v, x_t, None, lengths)
    assert fusion is None
    expected = [x_v.data[i, 0] @ x_t.data[i, lengths[i] - 1] for i in range(2)]
    np.testing.assert_allclose(scores.data, expected, atol=1e-9)


def test_invalid_mask_mode():
    with pytest.raises(ValueError):
        _head(mask_mode='sometimes')
