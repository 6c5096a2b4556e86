"""
偏好条件（维度 + 属性词集合）
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, List, Sequence

from config import CONDITION_WORDS, DIMENSIONS

from .errors import ConfigError


class Dimension(str, Enum):
    OVERALL = 'overall'
    AESTHETICS = 'aesthetics'
    ALIGNMENT = 'alignment'
    DETAIL = 'detail'

    @property
    def index(self) -> int:
        """在 DIMENSIONS（及教师隐变量向量）中的位置"""
        return DIMENSIONS.index(self.value)

def parse_dimension(value) -> Dimension:
    try:
        return Dimension(value.value if isinstance(value, Dimension) else str(value).lower())
    except ValueError:
        raise ConfigError(f'未知的偏好维度: {value}（可选: {", ".join(DIMENSIONS)}）') from None


def parse_dimensions(values: Iterable) -> List[Dimension]:
    dims = list(dict.fromkeys(parse_dimension(v) for v in values))
    if not dims:
        raise ConfigError('至少需要一个偏好维度')
    return dims


@dataclass(frozen=True)
class ConditionSpec:
    """一个偏好维度及其属性词列表"""
    name: str
    words: tuple

    def __post_init__(self):
        object.__setattr__(self, 'words', tuple(self.words))
        if not self.words:
            raise ConfigError(f'条件 {self.name} 的属性词为空')

    @classmethod
    def for_dimension(cls, dimension) -> 'ConditionSpec':
        dim = parse_dimension(dimension)
        return cls(dim.value, tuple(CONDITION_WORDS[dim.value]))

    @classmethod
    def custom(cls, name: str, words: Sequence[str]) -> 'ConditionSpec':
        """用户自定义词集（扩展点，词需在词表中才不会映射为 UNK）"""
        return cls(name, tuple(words))

    @property
    def text(self) -> str:
        return ' '.join(self.words)
