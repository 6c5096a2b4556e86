"""
标注归一化与多标注者聚合

每位标注者对两张图给出 1-5 分，先归一化为 [1, 0] / [0, 1] / [0.5, 0.5]，
再对三位标注者的结果取算术平均。
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, Optional, Sequence, Tuple

from .errors import AnnotationError

ANNOTATORS_PER_PAIR = 3
SCORE_RANGE = (1, 5)


@dataclass(frozen=True)
class PreferenceLabel:
    """软标签 [p₁, p₂]，p₁ + p₂ = 1"""
    p1: float
    p2: float

    def __post_init__(self):
        for p in (self.p1, self.p2):
            if not 0.0 <= p <= 1.0:
                raise AnnotationError(f'概率超出 [0, 1]: {p}')
        if abs(self.p1 + self.p2 - 1.0) > 1e-9:
            raise AnnotationError(f'p₁ + p₂ 必须为 1: {self.p1} + {self.p2}')

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'PreferenceLabel':
        if len(values) != 2:
            raise AnnotationError(f'标签必须有两个分量: {values}')
        return cls(float(values[0]), float(values[1]))

    def as_list(self):
        return [self.p1, self.p2]

    @property
    def is_tie(self) -> bool:
        return self.p1 == self.p2

    @property
    def winner(self) -> Optional[int]:
        """0 表示 y₁ 胜，1 表示 y₂ 胜，平局为 None"""
        if self.is_tie:
            return None
        return 0 if self.p1 > self.p2 else 1

    def swapped(self) -> 'PreferenceLabel':
        return PreferenceLabel(self.p2, self.p1)


@dataclass(frozen=True)
class AnnotationTriple:
    """一对图像在一个维度上的三位标注者打分"""
    pair_id: str
    dimension: str
    scores: Tuple[Tuple[int, int], ...]

    def __post_init__(self):
        scores = tuple(tuple(int(s) for s in pair) for pair in self.scores)
        object.__setattr__(self, 'scores', scores)
        if len(scores) != ANNOTATORS_PER_PAIR:
            raise AnnotationError(f'{self.pair_id}: 需要恰好 {ANNOTATORS_PER_PAIR} 位标注者，实际 {len(scores)}')
        for pair in scores:
            if len(pair) != 2:
                raise AnnotationError(f'{self.pair_id}: 每位标注者需要给出两个分数: {pair}')
            _check_score(pair[0])
            _check_score(pair[1])

    def to_dict(self) -> Dict:
        return {'pair_id': self.pair_id, 'dimension': self.dimension, 'scores': [list(s) for s in self.scores]}

    @classmethod
    def from_dict(cls, data: Dict) -> 'AnnotationTriple':
        return cls(data['pair_id'], data['dimension'], tuple(tuple(s) for s in data['scores']))


def _check_score(score):
    low, high = SCORE_RANGE
    if isinstance(score, bool) or int(score) != score or not low <= score <= high:
        raise AnnotationError(f'分数必须是 {low}-{high} 的整数: {score}')


def _normalized(score1: int, score2: int) -> Tuple[Fraction, Fraction]:
    _check_score(score1)
    _check_score(score2)
    if score1 > score2:
        return Fraction(1), Fraction(0)
    if score1 < score2:
        return Fraction(0), Fraction(1)
    return Fraction(1, 2), Fraction(1, 2)


def normalize_annotation(score1: int, score2: int) -> PreferenceLabel:
    """score₁>score₂ → [1,0]；score₁<score₂ → [0,1]；相等 → [0.5,0.5]"""
    p1, p2 = _normalized(score1, score2)
    return PreferenceLabel(float(p1), float(p2))


def aggregate_annotators(triple: AnnotationTriple) -> PreferenceLabel:
    """
    三位标注者归一化结果的算术平均

    用有理数精确求和；较大的分量转成浮点，较小的分量取 1 − 较大者，保证两者之和恰为 1。
    """
    total = Fraction(0)
    for score1, score2 in triple.scores:
        total += _normalized(score1, score2)[0]
    p1 = total / len(triple.scores)
    if p1 >= Fraction(1, 2):
        large = float(p1)
        return PreferenceLabel(large, 1.0 - large)
    large = float(1 - p1)
    return PreferenceLabel(1.0 - large, large)
