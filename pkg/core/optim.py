"""
AdamW 优化器与学习率预热
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from .errors import OptimizerError
from .params import ModelParams

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """一阶/二阶矩缓冲区与超参数"""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise OptimizerError(f'beta 超出范围: ({self.beta1}, {self.beta2})')
        if self.eps <= 0 or self.weight_decay < 0:
            raise OptimizerError(f'非法的 eps={self.eps} 或 weight_decay={self.weight_decay}')


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
               state: OptimizerState, lr: float) -> Dict[str, np.ndarray]:
    """
    一次 AdamW 更新，返回新参数（不修改输入数组）

    先做解耦权重衰减 θ ← θ(1 − lr·d)，再做带偏差修正的自适应矩更新。
    没有梯度的参数原样返回，既不衰减也不动用其矩缓冲区。
    任一梯度含 NaN/Inf 时在修改任何状态之前中止。
    """
    if lr < 0 or not np.isfinite(lr):
        raise OptimizerError(f'学习率非法: {lr}')
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != value.shape:
            raise OptimizerError(f'{name}: 梯度形状 {grad.shape} 与参数 {value.shape} 不一致')
        if not np.all(np.isfinite(grad)):
            bad = int(np.count_nonzero(~np.isfinite(grad)))
            raise OptimizerError(f'参数 {name} 的梯度含 {bad} 个非有限值，本步已中止')

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t

    updated = {}
    for name, value in params.items():
        grad = grads.get(name)
        if grad is None:
            updated[name] = value
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(value.shape, dtype=np.float64)
            v = np.zeros(value.shape, dtype=np.float64)
        m = b1 * m + (1.0 - b1) * grad
        v = b2 * v + (1.0 - b2) * grad * grad
        state.m[name] = m
        state.v[name] = v

        theta = value.astype(np.float64) * (1.0 - lr * state.weight_decay)
        theta = theta - lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        updated[name] = theta.astype(value.dtype)
    return updated


class AdamW:
    """作用于 ModelParams 的 AdamW"""

    def __init__(self, params: ModelParams, weight_decay: float = 0.01,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.state = OptimizerState(beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay)
        logger.debug(f'AdamW: betas={betas}, eps={eps}, weight_decay={weight_decay}')

    def step(self, lr: float):
        values = {name: t.data for name, t in self.params.items()}
        grads = {name: t.grad for name, t in self.params.items() if t.grad is not None}
        updated = adamw_step(values, grads, self.state, lr)
        for name, tensor in self.params.items():
            tensor.data = updated[name]

    def zero_grad(self):
        self.params.zero_grad()


def lr_schedule(step: int, warmup: int, peak: float) -> float:
    """线性预热: peak · min(step / warmup, 1)"""
    if warmup < 1:
        raise OptimizerError(f'warmup 必须 ≥ 1: {warmup}')
    if step < 0:
        raise OptimizerError(f'step 不能为负: {step}')
    return peak * min(step / warmup, 1.0)
