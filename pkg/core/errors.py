"""
异常定义
"""

from typing import Sequence


class MPSError(Exception):
    """所有领域异常的基类"""


class ShapeError(MPSError, ValueError):
    """张量形状不匹配"""


class NonFiniteError(MPSError):
    """前向计算产生 NaN/Inf"""


class FullyMaskedRowError(MPSError):
    """masked softmax 中存在整行被屏蔽的情况"""

    def __init__(self, rows: Sequence[tuple]):
        self.rows = [tuple(int(i) for i in r) for r in rows]
        super().__init__(f'{len(self.rows)} 行被完全屏蔽: {self.rows[:8]}')


class GraphError(MPSError):
    """计算图使用错误（非标量 loss、重复反向传播等）"""


class OptimizerError(MPSError):
    """优化器更新失败"""


class GradCheckError(MPSError):
    """梯度检查无法进行"""


class VocabularyError(MPSError, ValueError):
    """词表构建或查询失败"""


class TokenizationError(MPSError, ValueError):
    """分词失败"""


class AnnotationError(MPSError, ValueError):
    """标注数据不合法"""


class DatasetFormatError(MPSError):
    """数据文件格式错误"""

    def __init__(self, message: str, line: int = None):
        self.line = line
        if line is not None:
            message = f'第 {line} 行: {message}'
        super().__init__(message)


class SplitError(MPSError, ValueError):
    """数据集划分参数错误"""


class CheckpointError(MPSError):
    """检查点读写失败"""


class TrainingError(MPSError):
    """训练中止"""

    def __init__(self, message: str, last_checkpoint: str = None):
        self.last_checkpoint = last_checkpoint
        if last_checkpoint:
            message = f'{message}（最近一次有效检查点: {last_checkpoint}）'
        super().__init__(message)


class EvaluationError(MPSError, ValueError):
    """评估无法进行"""


class ConfigError(MPSError, ValueError):
    """配置错误"""
