"""
数据集分析统计模块
"""

import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

from config import DIMENSIONS, PROMPT_CATEGORIES

from .dataset import SPLITS, PreferenceDataset, PreferencePair, Prompt


@dataclass
class CategoryHistogram:
    """各类别提示词数与不平衡度 max/min（有空类别时为 inf）"""
    counts: Dict[str, int]
    imbalance: float

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> Dict:
        return {'counts': dict(self.counts), 'imbalance': self.imbalance}


def category_histogram(prompts: Iterable[Prompt]) -> CategoryHistogram:
    """七个类别全部列出，没有提示词的类别计 0"""
    counts = Counter(p.category for p in prompts)
    full = {category: counts.get(category, 0) for category in PROMPT_CATEGORIES}
    smallest = min(full.values())
    imbalance = math.inf if smallest == 0 else max(full.values()) / smallest
    return CategoryHistogram(full, imbalance)


class PromptAnalyzer:
    """数据集分析器"""

    def __init__(self, dataset: PreferenceDataset):
        self.dataset = dataset

    def pairs_in(self, split: Optional[str] = None) -> List[PreferencePair]:
        if split is None:
            return self.dataset.pairs
        return self.dataset.split(split)

    def analyze_by_category(self) -> Dict:
        """
        按提示词类别统计
        返回: {
            'Characters': {'prompts': 100, 'images': 200, 'pairs': 100},
            ...
        }
        """
        result = {c: {'prompts': 0, 'images': 0, 'pairs': 0} for c in PROMPT_CATEGORIES}
        for prompt in self.dataset.prompts.values():
            result[prompt.category]['prompts'] += 1
        for image in self.dataset.images.values():
            result[self.dataset.prompt(image.prompt_id).category]['images'] += 1
        for pair in self.dataset.pairs:
            result[self.dataset.prompt(pair.prompt_id).category]['pairs'] += 1
        return result

    def split_counts(self) -> Dict[str, int]:
        counts = Counter(p.split for p in self.dataset.pairs)
        return {s: counts.get(s, 0) for s in SPLITS}

    def same_model_fraction(self, split: Optional[str] = None) -> float:
        pairs = self.pairs_in(split)
        if not pairs:
            return 0.0
        return sum(p.same_model for p in pairs) / len(pairs)

    def tie_rates(self, split: Optional[str] = None) -> Dict[str, float]:
        """每个维度上标签为 [0.5, 0.5] 的图像对比例"""
        pairs = self.pairs_in(split)
        if not pairs:
            return {d: 0.0 for d in DIMENSIONS}
        return {d: sum(p.label(d).is_tie for p in pairs) / len(pairs) for d in DIMENSIONS}

    def soft_label_rate(self, split: Optional[str] = None) -> float:
        """标注者意见不一致（标签既非硬标签也非平局）的比例"""
        pairs = self.pairs_in(split)
        total = len(pairs) * len(DIMENSIONS)
        if not total:
            return 0.0
        soft = sum(1 for p in pairs for d in DIMENSIONS
                   if not p.label(d).is_tie and max(p.label(d).p1, p.label(d).p2) < 1.0)
        return soft / total

    def get_statistics(self) -> Dict:
        """
        获取整体统计信息
        """
        return {
            'prompts': len(self.dataset.prompts),
            'images': len(self.dataset.images),
            'pairs': len(self.dataset.pairs),
            'annotations': len(self.dataset.annotations),
            'category_histogram': category_histogram(self.dataset.prompts.values()).to_dict(),
            'category_stats': self.analyze_by_category(),
            'splits': self.split_counts(),
            'same_model_fraction': self.same_model_fraction(),
            'tie_rates': self.tie_rates(),
            'soft_label_rate': self.soft_label_rate(),
        }
