"""
模型参数存储

按登记顺序保存全部可学习张量，负责初始化、展平（检查点负载）与精度转换。
"""

import logging
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .errors import CheckpointError, ShapeError
from .tensor import DEFAULT_DTYPE, Tensor

logger = logging.getLogger(__name__)

INIT_MODES = ('uniform', 'zeros', 'ones')


class ModelParams:
    """有序、具名的参数集合"""

    def __init__(self, dtype=DEFAULT_DTYPE):
        self.dtype = np.dtype(dtype)
        self._tensors: Dict[str, Tensor] = {}

    def add(self, name: str, shape: Sequence[int], rng: np.random.Generator = None,
            init: str = 'uniform', fan_in: int = None) -> Tensor:
        """
        登记一个参数并初始化

        uniform: U(-1/√fan_in, 1/√fan_in)，fan_in 缺省取 shape[0]
        zeros / ones: 常数
        """
        if name in self._tensors:
            raise ValueError(f'参数重名: {name}')
        shape = tuple(int(s) for s in shape)
        if init not in INIT_MODES:
            raise ValueError(f'未知的初始化方式: {init}')
        if init == 'uniform':
            if rng is None:
                raise ValueError(f'{name}: uniform 初始化需要随机数生成器')
            bound = 1.0 / np.sqrt(fan_in or shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        elif init == 'zeros':
            data = np.zeros(shape)
        else:
            data = np.ones(shape)
        tensor = Tensor(data.astype(self.dtype), requires_grad=True, name=name)
        self._tensors[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self._tensors.items())

    @property
    def size(self) -> int:
        """参数总个数"""
        return int(sum(t.data.size for t in self._tensors.values()))

    def zero_grad(self):
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def manifest(self) -> List[Dict]:
        """[(name, shape, offset)]，offset 以元素个数计，恰好铺满展平后的负载"""
        entries = []
        offset = 0
        for name, tensor in self._tensors.items():
            entries.append({'name': name, 'shape': list(tensor.shape), 'offset': offset})
            offset += tensor.data.size
        return entries

    def flatten(self) -> np.ndarray:
        """按登记顺序拼接为一维 f32 数组"""
        if not self._tensors:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate([t.data.astype(np.float32).reshape(-1) for t in self._tensors.values()])

    def check_manifest(self, manifest: List[Dict]):
        """校验外部清单与本参数集合一致，出错时指出第一个不一致的参数"""
        names = list(self._tensors)
        for i, entry in enumerate(manifest):
            if i >= len(names):
                raise ShapeError(f'多余的参数: {entry["name"]}')
            name = names[i]
            if entry['name'] != name:
                raise ShapeError(f'参数顺序不一致: 期望 {name}，实际 {entry["name"]}')
            if tuple(entry['shape']) != self._tensors[name].shape:
                raise ShapeError(
                    f'参数 {name} 形状不一致: 模型 {self._tensors[name].shape}，'
                    f'检查点 {tuple(entry["shape"])}'
                )
        if len(manifest) < len(names):
            raise ShapeError(f'缺少参数: {names[len(manifest)]}')

    def load_flat(self, flat: np.ndarray, manifest: List[Dict] = None):
        """从展平数组恢复全部参数（保留当前精度）"""
        manifest = manifest if manifest is not None else self.manifest()
        self.check_manifest(manifest)
        expected = self.size
        if flat.size != expected:
            raise CheckpointError(f'负载长度 {flat.size} 与清单 {expected} 不一致')
        for entry in manifest:
            tensor = self._tensors[entry['name']]
            n = tensor.data.size
            chunk = flat[entry['offset']:entry['offset'] + n]
            tensor.data = chunk.reshape(tensor.shape).astype(self.dtype)
            tensor.zero_grad()

    def cast(self, dtype):
        """原地转换全部参数精度"""
        self.dtype = np.dtype(dtype)
        for tensor in self._tensors.values():
            tensor.data = tensor.data.astype(self.dtype)
            tensor.zero_grad()

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._tensors.items()}

    def restore(self, snapshot: Dict[str, np.ndarray]):
        for name, data in snapshot.items():
            self._tensors[name].data = data.copy()
        self.dtype = next(iter(snapshot.values())).dtype if snapshot else self.dtype
