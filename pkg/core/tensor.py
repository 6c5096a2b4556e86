"""
稠密张量与反向模式自动微分

Tensor 包装 numpy 数组；在 ComputeGraph 激活期间执行的可微运算会按执行顺序
记录在图中，backward 逆序遍历一次即可得到全部梯度。没有激活的图时，前向计算
不做任何记录（纯推理）。
"""

import logging
import math
import threading
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import FullyMaskedRowError, GraphError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

ArrayLike = Union['Tensor', np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_state = threading.local()


def current_graph() -> Optional['ComputeGraph']:
    """当前线程激活的计算图"""
    stack = getattr(_state, 'graphs', None)
    return stack[-1] if stack else None


class _Node:
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op: str, inputs: Tuple['Tensor', ...], output: 'Tensor', backward: BackwardFn):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class ComputeGraph:
    """
    运算记录带（tape）

    用法:
        with ComputeGraph() as graph:
            loss = ...
        backward(loss, graph)
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.consumed = False
        self.visits = 0
        self._outputs = set()

    def __enter__(self) -> 'ComputeGraph':
        if not hasattr(_state, 'graphs'):
            _state.graphs = []
        _state.graphs.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.graphs.pop()
        return False

    def __len__(self):
        return len(self.nodes)

    def record(self, op: str, inputs: Tuple['Tensor', ...], output: 'Tensor', backward: BackwardFn):
        if self.consumed:
            raise GraphError('计算图已被反向传播消耗，不能继续记录')
        self.nodes.append(_Node(op, inputs, output, backward))
        self._outputs.add(id(output))

    def owns(self, tensor: 'Tensor') -> bool:
        return id(tensor) in self._outputs


class Tensor:
    """稠密张量，可带梯度缓冲区"""

    __slots__ = ('data', 'requires_grad', 'grad', 'name')

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None, name: str = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != 'f':
            arr = arr.astype(DEFAULT_DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.size == 0:
            raise ShapeError(f'张量形状必须为正整数: {arr.shape}')
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self) -> 'Tensor':
        return swap_last(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f'item() 需要单元素张量，实际形状 {self.shape}')
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f'{self.name}: ' if self.name else ''
        return f'Tensor({label}shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})'

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError('仅支持除以常数')
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def as_tensor(value: ArrayLike, like: Tensor = None) -> Tensor:
    """常数包装成张量（不需要梯度）"""
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def custom_op(name: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn,
              allow_nonfinite: bool = False) -> Tensor:
    """
    生成一个运算的输出并（在需要时）登记到当前计算图

    backward 接收输出梯度，按 inputs 顺序返回各输入梯度（可为 None）
    """
    if not allow_nonfinite and not np.all(np.isfinite(data)):
        raise NonFiniteError(f'{name} 产生了非有限值')
    inputs = tuple(inputs)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad, dtype=data.dtype)
    if requires_grad:
        graph = current_graph()
        if graph is not None:
            graph.record(name, inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """把广播后的梯度求和回原始形状"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad



# ─── 逐元素运算 ─────────────────────────────────────────


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return custom_op('add', a.data + b.data, (a, b), _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return custom_op('sub', a.data - b.data, (a, b), _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return custom_op('mul', a.data * b.data, (a, b), _backward)


def neg(a: Tensor) -> Tensor:
    return custom_op('neg', -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return custom_op('exp', out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError('log 的输入必须为正数')
    return custom_op('log', np.log(a.data), (a,), lambda g: (g / a.data,))


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    """裁剪到 [low, high]，区间外梯度为 0"""
    inside = (a.data >= low) & (a.data <= high)
    return custom_op('clamp', np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU（tanh 近似）"""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def _backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * d_inner),)

    return custom_op('gelu', out, (a,), _backward)


# ─── 矩阵与形状运算 ─────────────────────────────────────


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    C[i][j] = Σ_l A[i][l]·B[l][j]，前导维度按 numpy 规则对齐
    """
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'matmul 需要至少二维输入: {a.shape} × {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul 内维度不一致: {a.shape} × {b.shape}')

    def _backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return custom_op('matmul', a.data @ b.data, (a, b), _backward)


# 以下数据搬移运算不会产生新的非有限值，允许 -inf 掩码原样通过


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return custom_op('transpose', np.transpose(a.data, axes), (a,),
                     lambda g: (np.transpose(g, inverse),), allow_nonfinite=True)


def swap_last(a: Tensor) -> Tensor:
    """交换最后两个维度"""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return custom_op('reshape', a.data.reshape(tuple(shape)), (a,),
                     lambda g: (g.reshape(a.shape),), allow_nonfinite=True)


def _is_fancy(key) -> bool:
    parts = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in parts)


def take(a: Tensor, key) -> Tensor:
    """索引（支持切片与整数数组），整数数组索引的反向用 np.add.at 累加"""
    raw = a.data[key]
    raw_shape = np.shape(raw)
    fancy = _is_fancy(key)

    def _backward(g):
        grad = np.zeros_like(a.data)
        if fancy:
            np.add.at(grad, key, g.reshape(raw_shape))
        else:
            grad[key] = g.reshape(raw_shape)
        return (grad,)

    return custom_op('take', np.array(raw, copy=True).reshape(raw_shape or (1,)), (a,), _backward,
                     allow_nonfinite=True)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return custom_op('concat', np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward,
                     allow_nonfinite=True)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    """按行重复等广播（输出为独立拷贝）"""
    shape = tuple(shape)
    return custom_op('broadcast_to', np.array(np.broadcast_to(a.data, shape)), (a,),
                     lambda g: (_unbroadcast(g, a.shape),), allow_nonfinite=True)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    out_shape = np.shape(out)

    def _backward(g):
        g = g.reshape(out_shape)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        elif axis is None:
            g = np.reshape(g, (1,) * a.ndim)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return custom_op('sum', np.asarray(out, dtype=a.dtype), (a,), _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ─── 归一化与 softmax ───────────────────────────────────


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """最后一维上的 LayerNorm"""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat * gain.data + bias.data

    def _backward(g):
        d_hat = g * gain.data
        dx = inv_std * (d_hat - d_hat.mean(axis=-1, keepdims=True)
                        - x_hat * (d_hat * x_hat).mean(axis=-1, keepdims=True))
        return dx, _unbroadcast(g * x_hat, gain.shape), _unbroadcast(g, bias.shape)

    return custom_op('layer_norm', out, (x, gain, bias), _backward)


def _mask_array(mask) -> np.ndarray:
    data = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if not np.all((data == 0) | np.isneginf(data)):
        raise ShapeError('mask 只能包含 0 或 -inf')
    return data


def masked_softmax_rows(m: Tensor, mask: Union[Tensor, np.ndarray, None] = None) -> Tensor:
    """
    最后一维上的 softmax，mask 为加性 {0, -inf}

    -inf 位置在取指数之前处理，输出恰为 0；整行被屏蔽时抛出 FullyMaskedRowError，
    由调用方决定如何回退。mask 作为张量且需要梯度时，得到与 logits 相同的梯度
    （即直通估计）。
    """
    if mask is None:
        valid = np.ones(m.shape, dtype=bool)
    else:
        mask_data = _mask_array(mask)
        try:
            valid = np.broadcast_to(mask_data == 0, m.shape)
        except ValueError:
            raise ShapeError(f'mask 形状 {mask_data.shape} 无法对齐 {m.shape}') from None
    empty = ~valid.any(axis=-1)
    if empty.any():
        raise FullyMaskedRowError([tuple(r) for r in np.argwhere(empty)])

    shifted = np.where(valid, m.data, -np.inf)
    row_max = shifted.max(axis=-1, keepdims=True)
    e = np.exp(np.where(valid, m.data - row_max, 0.0)) * valid
    out = (e / e.sum(axis=-1, keepdims=True)).astype(m.dtype, copy=False)

    inputs = (m,) if not isinstance(mask, Tensor) else (m, mask)

    def _backward(g):
        gx = out * (g - (out * g).sum(axis=-1, keepdims=True))
        if len(inputs) == 1:
            return (gx,)
        return gx, _unbroadcast(gx, mask.shape)

    return custom_op('masked_softmax_rows', out, inputs, _backward)


def softmax_rows(m: Tensor) -> Tensor:
    return masked_softmax_rows(m, None)


# ─── 反向传播 ──────────────────────────────────────────


def backward(loss: Tensor, graph: ComputeGraph):
    """
    从标量 loss 反向遍历计算图，把 ∂loss/∂θ 累加到所有叶子参数的 grad 上

    计算图只能使用一次。
    """
    if loss.data.size != 1:
        raise GraphError(f'loss 必须是标量，实际形状 {loss.shape}')
    if graph.consumed:
        raise GraphError('同一计算图不能重复反向传播')
    if not graph.owns(loss):
        raise GraphError('loss 不是该计算图中产生的张量')
    graph.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        graph.visits += 1
        if g is None:
            continue
        input_grads = node.backward(g)
        for tensor, grad in zip(node.inputs, input_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
            if not graph.owns(tensor):
                leaves[key] = tensor

    for key, tensor in leaves.items():
        grad = grads[key].astype(tensor.dtype, copy=False).reshape(tensor.shape)
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad
    logger.debug(f'反向传播完成: {len(graph.nodes)} 个运算, {len(leaves)} 个参数')
