"""
常数打分器（基线）
"""

from typing import Sequence

import numpy as np

from ..base_scorer import PreferenceScorer
from ..dataset import ImageRecord, Prompt


class ConstantScorer(PreferenceScorer):
    """所有图像同分，argmax 平局时总是选第一张"""

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    @property
    def name(self) -> str:
        return 'constant'

    def score_images(self, prompt: Prompt, images: Sequence[ImageRecord], dimension: str) -> np.ndarray:
        return np.full(len(images), self.value, dtype=np.float64)

    def fingerprint(self) -> str:
        return f'constant-{self.value:g}'
