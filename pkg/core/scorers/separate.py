"""
分维度单独训练的模型组合
"""

import hashlib
from typing import Dict, Sequence

import numpy as np

from ..base_scorer import PreferenceScorer
from ..conditions import parse_dimension
from ..dataset import ImageRecord, PreferenceDataset, PreferencePair, Prompt
from ..errors import EvaluationError


class PerDimensionScorer(PreferenceScorer):
    """每个维度交给只在该维度上训练的模型打分"""

    def __init__(self, scorers: Dict[str, PreferenceScorer]):
        if not scorers:
            raise EvaluationError('至少需要一个维度的模型')
        self.scorers = {parse_dimension(d).value: s for d, s in scorers.items()}

    @property
    def name(self) -> str:
        return 'separate'

    def _scorer(self, dimension: str) -> PreferenceScorer:
        key = parse_dimension(dimension).value
        if key not in self.scorers:
            raise EvaluationError(f'没有为维度 {key} 单独训练的模型')
        return self.scorers[key]

    def score_images(self, prompt: Prompt, images: Sequence[ImageRecord], dimension: str) -> np.ndarray:
        return self._scorer(dimension).score_images(prompt, images, dimension)

    def score_pair_chunk(self, pairs: Sequence[PreferencePair], dataset: PreferenceDataset,
                         dimension: str) -> np.ndarray:
        return self._scorer(dimension).score_pair_chunk(pairs, dataset, dimension)

    def fingerprint(self) -> str:
        joined = ','.join(f'{d}={self.scorers[d].fingerprint()}' for d in sorted(self.scorers))
        return hashlib.sha256(joined.encode('utf-8')).hexdigest()[:16]
