"""
偏好打分器抽象基类
定义所有打分器（训练得到的模型、植入的教师、常数基线）必须实现的接口
"""

import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from typing import List, Sequence

import numpy as np

from .dataset import ImageRecord, PreferenceDataset, PreferencePair, Prompt
from .errors import EvaluationError

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 64


class PreferenceScorer(ABC):
    """偏好打分器抽象基类"""

    @property
    @abstractmethod
    def name(self) -> str:
        """打分器名称"""
        pass

    @abstractmethod
    def score_images(self, prompt: Prompt, images: Sequence[ImageRecord], dimension: str) -> np.ndarray:
        """
        在给定偏好维度下为同一提示词的若干图像打分

        Returns:
            形状 (len(images),) 的 float64 数组
        """
        pass

    @abstractmethod
    def fingerprint(self) -> str:
        """参数与配置的摘要，用于报告"""
        pass

    def score_pair_chunk(self, pairs: Sequence[PreferencePair], dataset: PreferenceDataset,
                         dimension: str) -> np.ndarray:
        """一组图像对的 (s₁, s₂)，子类可改为批量实现"""
        rows = []
        for pair in pairs:
            images = [dataset.image(pair.y1), dataset.image(pair.y2)]
            rows.append(self.score_images(dataset.prompt(pair.prompt_id), images, dimension))
        return np.asarray(rows, dtype=np.float64).reshape(len(pairs), 2)

    def score_pairs(self, pairs: Sequence[PreferencePair], dataset: PreferenceDataset, dimension: str,
                    threads: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE) -> np.ndarray:
        """
        全部图像对的得分，形状 (N, 2)

        按固定大小分块；threads > 1 时各块在线程池中并行，结果按块顺序拼接，
        因此输出与线程数无关。
        """
        if threads < 1:
            raise EvaluationError(f'threads 必须 ≥ 1: {threads}')
        pairs = list(pairs)
        if not pairs:
            return np.zeros((0, 2))
        chunks: List[Sequence[PreferencePair]] = [pairs[i:i + chunk_size] for i in range(0, len(pairs), chunk_size)]
        if threads == 1 or len(chunks) == 1:
            results = [self.score_pair_chunk(c, dataset, dimension) for c in chunks]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(lambda c: self.score_pair_chunk(c, dataset, dimension), chunks))
        logger.debug(f'{self.name}: {dimension} 维度完成 {len(pairs)} 个图像对打分（{len(chunks)} 块）')
        return np.concatenate(results, axis=0)
