"""
成对偏好目标

p̂ᵢ = exp(sᵢ) / (exp(s₁) + exp(s₂))
L_P = Σ_c Σ_i p_{i,c}·(log p_{i,c} − log p̂_{i,c})，0·log 0 ≡ 0，按批平均
"""

import math
from typing import Tuple, Union

import numpy as np

from config import PROB_CLAMP_EPS

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


def pair_probabilities(s1: float, s2: float) -> Tuple[float, float]:
    """减去最大值后再取指数"""
    m = max(s1, s2)
    e1 = math.exp(s1 - m)
    e2 = math.exp(s2 - m)
    total = e1 + e2
    return e1 / total, e2 / total


def pair_probability_tensor(scores: Tensor) -> Tensor:
    """(..., 2) 得分 -> (..., 2) 概率（可微）"""
    if scores.shape[-1] != 2:
        raise ShapeError(f'最后一维必须为 2: {scores.shape}')
    return T.softmax_rows(scores)


def _entropy_term(labels: np.ndarray) -> float:
    """Σ p·log p，0·log 0 取 0"""
    safe = np.where(labels > 0, labels, 1.0)
    return float(np.sum(np.where(labels > 0, labels * np.log(safe), 0.0)))


def preference_loss(predicted: Union[Tensor, np.ndarray], labels: np.ndarray,
                    eps: float = PROB_CLAMP_EPS) -> Tensor:
    """
    KL(p ‖ p̂) 在全部条件与两张图上求和后按批平均

    Args:
        predicted: (P, C, 2) 或 (P, 2) 的预测概率 p̂
        labels: 与 predicted 同形的软标签 p
    """
    predicted = predicted if isinstance(predicted, Tensor) else Tensor(np.asarray(predicted))
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != predicted.shape:
        raise ShapeError(f'标签形状 {labels.shape} 与预测 {predicted.shape} 不一致')
    batch = labels.shape[0]
    clamped = T.clamp(predicted, eps, 1.0 - eps)
    cross = T.sum(T.mul(Tensor(labels.astype(predicted.dtype)), T.log(clamped)))
    return cross * (-1.0 / batch) + _entropy_term(labels) / batch
