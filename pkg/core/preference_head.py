"""
偏好条件掩码与掩码交叉注意力

相关性   R = X_c·W_c·X_tᵀ + b_c                        (n_c × n_p)
条件掩码 M_c = R 沿 n_c 取均值后重复 n_v 行               (n_v × n_p)
二值化   M̄_c = −inf (M_c < τ) / 0 (M_c ≥ τ)
融合     softmax((X_v W_q)(X_t W_k)ᵀ/√d_h + M̄_c)·(X_t W_v)，多头
得分     S = α · f_vt·f_t，f_vt 为融合结果第 0 行（CLS），f_t 为 X_t 最后一个真实词元

所有运算都接受前导批维度；批内提示词补齐后，补齐列用 −inf 屏蔽。
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Set

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import merge_heads, split_heads
from .params import ModelParams
from .tensor import Tensor, custom_op

logger = logging.getLogger(__name__)

MASK_MODES = ('hard', 'soft', 'off')
FUSION_MODES = ('cross_attention', 'base')


@dataclass
class ConditionParams:
    """W_c, b_c 与掩码设置"""
    w_c: Tensor
    b_c: Tensor
    threshold: float = 0.0
    mask_mode: str = 'hard'
    straight_through: bool = True
    soft_scale: float = 1.0

    def __post_init__(self):
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f'mask_mode 必须是 {MASK_MODES} 之一: {self.mask_mode}')
        if math.isnan(self.threshold):
            raise ConfigError('阈值 τ 不能为 NaN')


@dataclass
class CrossAttentionParams:
    """W_q, W_k, W_v、头数与 α"""
    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    heads: int
    alpha: Tensor

    def __post_init__(self):
        width = self.w_q.shape[0]
        if width % self.heads:
            raise ConfigError(f'宽度 {width} 不能被交叉注意力头数 {self.heads} 整除')


@dataclass
class FusionOutput:
    """
    融合结果（批维度在前）

    fused: (B, n_v, n_d)；f_vt / f_t: (B, 1, n_d)；mask_used: (B, n_v, n_p) 实际加到 logits 上的掩码
    （含补齐列）；fallback_rows: 每个样本中整行被屏蔽而回退为无掩码注意力的行号；
    attention: (B, heads, n_v, n_p) 注意力权重；condition_values: 二值化前的 M_c
    """
    fused: Tensor
    f_vt: Tensor
    f_t: Tensor
    mask_used: np.ndarray
    fallback_rows: List[Set[int]] = field(default_factory=list)
    attention: Optional[np.ndarray] = None
    condition_values: Optional[np.ndarray] = None


def relevance(x_c: Tensor, x_t: Tensor, cp: ConditionParams) -> Tensor:
    """R = X_c·W_c·X_tᵀ + b_c"""
    if x_c.shape[-1] != x_t.shape[-1] or x_c.shape[-1] != cp.w_c.shape[0]:
        raise ShapeError(f'宽度不一致: X_c {x_c.shape}, X_t {x_t.shape}, W_c {cp.w_c.shape}')
    return T.matmul(T.matmul(x_c, cp.w_c), T.swap_last(x_t)) + cp.b_c


def build_condition_mask(r: Tensor, n_v: int) -> Tensor:
    """沿 n_c 取均值，再重复 n_v 行"""
    if n_v < 1:
        raise ShapeError(f'n_v 必须 ≥ 1: {n_v}')
    row = T.mean(r, axis=-2, keepdims=True)
    return T.broadcast_to(row, (*row.shape[:-2], n_v, row.shape[-1]))


def binarize_mask(m_c: Tensor, threshold: float, straight_through: bool = True) -> Tensor:
    """
    M_c < τ 的位置为 −inf，其余为 0

    straight_through 为真时反向按恒等映射传梯度，否则掩码是常量。
    """
    if math.isnan(threshold):
        raise ConfigError('阈值 τ 不能为 NaN')
    out = np.where(m_c.data < threshold, -np.inf, 0.0).astype(m_c.dtype)
    if not straight_through:
        return Tensor(out)
    return custom_op('binarize_mask', out, (m_c,), lambda g: (g,), allow_nonfinite=True)


def key_padding(lengths: np.ndarray, n_p: int) -> np.ndarray:
    """(B, n_p)：补齐列为 −inf"""
    cols = np.arange(n_p)[None, :]
    return np.where(cols < np.asarray(lengths)[:, None], 0.0, -np.inf)


def combine_masks(cond_mask: Optional[Tensor], padding: np.ndarray, n_v: int):
    """
    条件掩码与补齐掩码相加，得到 (B, 1, n_v, n_p) 的注意力掩码

    真实列全部被屏蔽的行回退为只有补齐掩码（等价于无条件掩码），这些行不向条件掩码回传梯度。
    返回 (掩码张量, 每个样本的回退行集合)
    """
    b, n_p = padding.shape
    pad = np.broadcast_to(padding[:, None, :], (b, n_v, n_p))
    if cond_mask is None:
        data = np.array(pad)[:, None]
        return Tensor(data), [set() for _ in range(b)]
    if cond_mask.shape != (b, n_v, n_p):
        raise ShapeError(f'条件掩码形状 {cond_mask.shape} 与 {(b, n_v, n_p)} 不一致')

    blocked = np.isneginf(cond_mask.data) | np.isneginf(pad)
    fallback = blocked.all(axis=-1)
    combined = np.where(fallback[..., None], pad, cond_mask.data + pad).astype(cond_mask.dtype)
    keep_grad = ~fallback[..., None]
    fallback_rows = [set(int(i) for i in np.flatnonzero(row)) for row in fallback]

    def _backward(g):
        return (g.reshape(b, n_v, n_p) * keep_grad,)

    mask = custom_op('combine_masks', combined[:, None], (cond_mask,), _backward, allow_nonfinite=True)
    return mask, fallback_rows


def last_token_rows(x_t: Tensor, lengths: np.ndarray) -> Tensor:
    """f_t：每条提示词最后一个真实词元（EOS）所在行，形状 (B, 1, n_d)"""
    b = x_t.shape[0]
    rows = T.take(x_t, (np.arange(b), np.asarray(lengths) - 1))
    return T.reshape(rows, (b, 1, x_t.shape[-1]))


def masked_cross_attention(x_v: Tensor, x_t: Tensor, cond_mask: Optional[Tensor],
                           cap: CrossAttentionParams, lengths: np.ndarray = None,
                           bias: Optional[Tensor] = None) -> FusionOutput:
    """
    图像行作为 query、提示词作为 key/value 的多头交叉注意力

    Args:
        x_v: (B, n_v, n_d)
        x_t: (B, n_p, n_d)
        cond_mask: (B, n_v, n_p) 的 {0, −inf} 掩码，None 表示不使用条件掩码
        lengths: 每条提示词的真实长度，缺省为 n_p
        bias: 软掩码模式下直接加到 logits 上的 λ·M_c
    """
    if x_v.ndim != 3 or x_t.ndim != 3 or x_v.shape[0] != x_t.shape[0]:
        raise ShapeError(f'交叉注意力输入形状不匹配: X_v {x_v.shape}, X_t {x_t.shape}')
    if x_v.shape[-1] != x_t.shape[-1] or x_v.shape[-1] != cap.w_q.shape[0]:
        raise ShapeError(f'宽度不一致: X_v {x_v.shape}, X_t {x_t.shape}, W_q {cap.w_q.shape}')
    b, n_v, width = x_v.shape
    n_p = x_t.shape[1]
    lengths = np.full(b, n_p) if lengths is None else np.asarray(lengths)

    mask, fallback_rows = combine_masks(cond_mask, key_padding(lengths, n_p), n_v)

    q = split_heads(T.matmul(x_v, cap.w_q), cap.heads)
    k = split_heads(T.matmul(x_t, cap.w_k), cap.heads)
    v = split_heads(T.matmul(x_t, cap.w_v), cap.heads)
    logits = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(width // cap.heads))
    if bias is not None:
        logits = logits + T.reshape(bias, (b, 1, n_v, n_p))
    weights = T.masked_softmax_rows(logits, mask)
    fused = merge_heads(T.matmul(weights, v))

    return FusionOutput(
        fused=fused,
        f_vt=T.take(fused, (slice(None), slice(0, 1))),
        f_t=last_token_rows(x_t, lengths),
        mask_used=mask.data[:, 0],
        fallback_rows=fallback_rows,
        attention=weights.data,
    )


def score_from_rows(f_vt: Tensor, f_t: Tensor, alpha: Tensor) -> Tensor:
    """S = α · f_vt·f_t，形状 (B,)"""
    dots = T.sum(f_vt * f_t, axis=(-2, -1))
    return dots * alpha


class PreferenceHead:
    """条件相关性、掩码与交叉注意力融合的参数与前向"""

    def __init__(self, params: ModelParams, width: int, heads: int, rng: np.random.Generator,
                 threshold: float = 0.0, mask_mode: str = 'hard', straight_through: bool = True,
                 soft_scale: float = 1.0, fusion: str = 'cross_attention'):
        if fusion not in FUSION_MODES:
            raise ConfigError(f'fusion 必须是 {FUSION_MODES} 之一: {fusion}')
        self.fusion = fusion
        self.condition = ConditionParams(
            w_c=params.add('head.w_c', (width, width), rng, fan_in=width),
            b_c=params.add('head.b_c', (1,), init='zeros'),
            threshold=threshold,
            mask_mode=mask_mode,
            straight_through=straight_through,
            soft_scale=soft_scale,
        )
        self.cross = CrossAttentionParams(
            w_q=params.add('head.w_q', (width, width), rng, fan_in=width),
            w_k=params.add('head.w_k', (width, width), rng, fan_in=width),
            w_v=params.add('head.w_v', (width, width), rng, fan_in=width),
            heads=heads,
            alpha=params.add('head.alpha', (1,), init='ones'),
        )

    def fuse(self, x_v: Tensor, x_t: Tensor, x_c: Optional[Tensor], lengths: np.ndarray = None) -> FusionOutput:
        """按 mask_mode 构造条件掩码并做交叉注意力"""
        cp = self.condition
        n_v = x_v.shape[-2]
        cond_mask, bias, m_c = None, None, None
        if x_c is not None:
            m_c = build_condition_mask(relevance(x_c, x_t, cp), n_v)
            if cp.mask_mode == 'hard':
                cond_mask = binarize_mask(m_c, cp.threshold, cp.straight_through)
            elif cp.mask_mode == 'soft':
                bias = m_c * cp.soft_scale
        output = masked_cross_attention(x_v, x_t, cond_mask, self.cross, lengths, bias)
        if m_c is not None:
            output.condition_values = m_c.data
        return output

    def __call__(self, x_v: Tensor, x_t: Tensor, x_c: Optional[Tensor], lengths: np.ndarray = None):
        """返回 (得分 (B,), FusionOutput 或 None)"""
        if self.fusion == 'base':
            b = x_t.shape[0]
            lengths = np.full(b, x_t.shape[1]) if lengths is None else lengths
            f_vt = T.take(x_v, (slice(None), slice(0, 1)))
            return score_from_rows(f_vt, last_token_rows(x_t, lengths), self.cross.alpha), None
        output = self.fuse(x_v, x_t, x_c, lengths)
        return score_from_rows(output.f_vt, output.f_t, self.cross.alpha), output
