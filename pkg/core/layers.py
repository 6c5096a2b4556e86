"""
Transformer 基础层

所有层都支持任意前导批维度，参数登记在共享的 ModelParams 中。
"""

import math
from typing import Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .params import ModelParams
from .tensor import Tensor


class Linear:
    """y = x·W + b"""

    def __init__(self, params: ModelParams, name: str, n_in: int, n_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.weight = params.add(f'{name}.weight', (n_in, n_out), rng, fan_in=n_in)
        self.bias = params.add(f'{name}.bias', (n_out,), init='zeros') if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm:
    def __init__(self, params: ModelParams, name: str, width: int):
        self.gain = params.add(f'{name}.gain', (width,), init='ones')
        self.bias = params.add(f'{name}.bias', (width,), init='zeros')

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


def split_heads(x: Tensor, heads: int) -> Tensor:
    """(..., n, d) -> (..., heads, n, d/heads)"""
    *lead, n, d = x.shape
    if d % heads:
        raise ShapeError(f'宽度 {d} 不能被头数 {heads} 整除')
    x = T.reshape(x, (*lead, n, heads, d // heads))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return T.transpose(x, axes)


def merge_heads(x: Tensor) -> Tensor:
    """(..., heads, n, d_h) -> (..., n, heads·d_h)"""
    *lead, heads, n, d_h = x.shape
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = T.transpose(x, axes)
    return T.reshape(x, (*lead, n, heads * d_h))


def scaled_attention(q: Tensor, k: Tensor, v: Tensor, mask=None,
                     bias: Optional[Tensor] = None) -> Tuple[Tensor, Tensor]:
    """
    softmax(q·kᵀ/√d_h + bias + mask)·v

    返回 (输出, 注意力权重)
    """
    logits = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        logits = logits + bias
    weights = T.masked_softmax_rows(logits, mask)
    return T.matmul(weights, v), weights


def causal_mask(n: int) -> np.ndarray:
    """上三角为 -inf 的 n×n 加性掩码"""
    mask = np.zeros((n, n), dtype=np.float32)
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


class MultiHeadAttention:
    """多头自注意力（带输出投影）"""

    def __init__(self, params: ModelParams, name: str, width: int, heads: int, rng: np.random.Generator):
        if width % heads:
            raise ShapeError(f'{name}: 宽度 {width} 不能被头数 {heads} 整除')
        self.heads = heads
        self.query = Linear(params, f'{name}.query', width, width, rng)
        self.key = Linear(params, f'{name}.key', width, width, rng)
        self.value = Linear(params, f'{name}.value', width, width, rng)
        self.out = Linear(params, f'{name}.out', width, width, rng)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        q = split_heads(self.query(x), self.heads)
        k = split_heads(self.key(x), self.heads)
        v = split_heads(self.value(x), self.heads)
        attended, _ = scaled_attention(q, k, v, mask)
        return self.out(merge_heads(attended))


class FeedForward:
    def __init__(self, params: ModelParams, name: str, width: int, rng: np.random.Generator):
        self.up = Linear(params, f'{name}.up', width, 4 * width, rng)
        self.down = Linear(params, f'{name}.down', 4 * width, width, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(T.gelu(self.up(x)))


class TransformerBlock:
    """pre-norm: x + attn(ln(x))，再 x + ffn(ln(x))"""

    def __init__(self, params: ModelParams, name: str, width: int, heads: int, rng: np.random.Generator):
        self.norm1 = LayerNorm(params, f'{name}.norm1', width)
        self.attn = MultiHeadAttention(params, f'{name}.attn', width, heads, rng)
        self.norm2 = LayerNorm(params, f'{name}.norm2', width)
        self.ffn = FeedForward(params, f'{name}.ffn', width, rng)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.attn(self.norm1(x), mask)
        return x + self.ffn(self.norm2(x))
