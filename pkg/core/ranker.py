"""
按得分对同一提示词的候选图像重排序
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence

from .base_scorer import PreferenceScorer
from .conditions import parse_dimension
from .dataset import ImageRecord, Prompt
from .errors import EvaluationError

logger = logging.getLogger(__name__)


@dataclass
class RankResult:
    """按得分降序排列的图像；同分时按图像 id 升序"""
    prompt_id: str
    condition: str
    image_ids: List[str]
    scores: List[float]

    @property
    def top(self) -> str:
        return self.image_ids[0]

    def to_dict(self) -> Dict:
        return {'prompt_id': self.prompt_id, 'condition': self.condition,
                'image_ids': self.image_ids, 'scores': self.scores}


def rank_images(scorer: PreferenceScorer, prompt: Prompt, images: Sequence[ImageRecord],
                condition: str) -> RankResult:
    if not images:
        raise EvaluationError(f'提示词 {prompt.id} 没有候选图像')
    for image in images:
        if image.prompt_id != prompt.id:
            raise EvaluationError(f'图像 {image.id} 不属于提示词 {prompt.id}')
    dimension = parse_dimension(condition).value
    scores = scorer.score_images(prompt, images, dimension)
    order = sorted(range(len(images)), key=lambda i: (-float(scores[i]), images[i].id))
    result = RankResult(
        prompt_id=prompt.id,
        condition=dimension,
        image_ids=[images[i].id for i in order],
        scores=[float(scores[i]) for i in order],
    )
    logger.debug(f'{prompt.id} [{dimension}] 排名第一: {result.top}')
    return result
