"""
植入教师打分器：直接读取合成图像的隐变量 q
"""

from typing import Sequence

import numpy as np

from ..base_scorer import PreferenceScorer
from ..conditions import parse_dimension
from ..dataset import ImageRecord, Prompt
from ..errors import EvaluationError


class PlantedTeacherScorer(PreferenceScorer):
    """得分 = sharpness · qᵈ"""

    def __init__(self, sharpness: float = 1.0):
        if not sharpness > 0:
            raise EvaluationError(f'sharpness 必须为正: {sharpness}')
        self.sharpness = float(sharpness)

    @property
    def name(self) -> str:
        return 'teacher'

    def score_images(self, prompt: Prompt, images: Sequence[ImageRecord], dimension: str) -> np.ndarray:
        index = parse_dimension(dimension).index
        scores = []
        for image in images:
            if image.teacher_q is None:
                raise EvaluationError(f'图像 {image.id} 没有教师隐变量（非合成数据）')
            scores.append(self.sharpness * image.teacher_q[index])
        return np.asarray(scores, dtype=np.float64)

    def fingerprint(self) -> str:
        return f'teacher-{self.sharpness:g}'
