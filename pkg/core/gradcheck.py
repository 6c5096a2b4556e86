"""
有限差分梯度检查
"""

import logging
from typing import Callable

import numpy as np

from .errors import GradCheckError
from .params import ModelParams
from .tensor import ComputeGraph, Tensor, backward

logger = logging.getLogger(__name__)

# 相对误差分母下限，梯度接近 0 的坐标按绝对误差比较
RELATIVE_FLOOR = 1e-3


def grad_check(loss_fn: Callable[[], Tensor], params: ModelParams, samples: int = 64,
               eps: float = 1e-4, rng: np.random.Generator = None,
               floor: float = RELATIVE_FLOOR) -> float:
    """
    比较解析梯度与中心差分 (f(θ+ε) − f(θ−ε)) / 2ε，返回最大相对误差

    解析梯度按参数当前精度计算；差分时所有参数临时转为 float64，结束后原样恢复。

    Args:
        loss_fn: 无参闭包，返回标量 loss（读取 params 中的张量）
        params: 参与检查的参数集合
        samples: 随机抽查的坐标个数
        eps: 差分步长，取值 [1e-6, 1e-3]
        rng: 抽样用随机数生成器
    """
    if not 1e-6 <= eps <= 1e-3:
        raise GradCheckError(f'eps 必须在 [1e-6, 1e-3] 内: {eps}')
    if samples < 1:
        raise GradCheckError(f'samples 必须 ≥ 1: {samples}')
    rng = rng or np.random.default_rng(0)

    first = loss_fn().data.copy()
    second = loss_fn().data.copy()
    if not np.array_equal(first, second):
        raise GradCheckError(f'前向计算不确定: 两次调用结果 {first} 与 {second} 不一致')

    params.zero_grad()
    with ComputeGraph() as graph:
        loss = loss_fn()
    backward(loss, graph)
    analytic = {name: (t.grad.astype(np.float64) if t.grad is not None else np.zeros(t.shape))
                for name, t in params.items()}

    manifest = params.manifest()
    total = params.size
    picks = np.sort(rng.choice(total, size=min(samples, total), replace=False))
    offsets = np.array([e['offset'] for e in manifest])

    snapshot = params.snapshot()
    original_dtype = params.dtype
    worst = 0.0
    try:
        params.cast(np.float64)
        for flat_index in picks:
            entry = manifest[int(np.searchsorted(offsets, flat_index, side='right')) - 1]
            tensor = params[entry['name']]
            index = np.unravel_index(int(flat_index - entry['offset']), tensor.shape)
            saved = tensor.data[index]

            tensor.data[index] = saved + eps
            plus = loss_fn().item()
            tensor.data[index] = saved - eps
            minus = loss_fn().item()
            tensor.data[index] = saved

            numeric = (plus - minus) / (2.0 * eps)
            a = float(analytic[entry['name']][index])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            if rel > worst:
                worst = rel
                logger.debug(f'{entry["name"]}{index}: 解析 {a:.6g}，差分 {numeric:.6g}，相对误差 {rel:.3g}')
    finally:
        params.restore(snapshot)
        params.dtype = np.dtype(original_dtype)
        params.zero_grad()

    logger.info(f'梯度检查: {len(picks)} 个坐标，最大相对误差 {worst:.3g}')
    return worst
