"""
MPS 模型：编码器 + 偏好头
"""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import tensor as T
from .base_scorer import PreferenceScorer
from .conditions import ConditionSpec, parse_dimension
from .dataset import ImageRecord, PreferenceDataset, PreferencePair, Prompt
from .encoders import ImageEncoder, TextEncoder, encode_images, encode_texts, pad_sequences
from .errors import ConfigError, ShapeError
from .params import ModelParams
from .preference_head import FUSION_MODES, MASK_MODES, FusionOutput, PreferenceHead, score_from_rows
from .tensor import Tensor
from .tokenizer import Vocabulary, tokenize

logger = logging.getLogger(__name__)

DTYPES = ('float32', 'float64')
Condition = Union[str, ConditionSpec]


@dataclass
class ModelConfig:
    width: int = 64
    depth: int = 2
    heads: int = 4
    cross_heads: int = 4
    image_size: int = 32
    channels: int = 3
    patch_size: int = 8
    max_length: int = 32
    vocab_size: int = 2048
    fusion: str = 'cross_attention'
    mask_mode: str = 'hard'
    threshold: float = 0.0
    straight_through: bool = True
    soft_mask_scale: float = 1.0
    dtype: str = 'float32'

    def __post_init__(self):
        for name in ('width', 'depth', 'heads', 'cross_heads', 'image_size', 'channels', 'patch_size',
                     'max_length', 'vocab_size'):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f'model.{name} 必须是正整数: {value!r}')
        if self.width % self.heads or self.width % self.cross_heads:
            raise ConfigError(f'model.width={self.width} 必须能被 heads={self.heads} 与 cross_heads={self.cross_heads} 整除')
        if self.image_size % self.patch_size:
            raise ConfigError(f'model.image_size={self.image_size} 必须能被 patch_size={self.patch_size} 整除')
        if self.max_length < 2:
            raise ConfigError('model.max_length 至少为 2')
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f'model.fusion 必须是 {FUSION_MODES} 之一: {self.fusion}')
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f'model.mask_mode 必须是 {MASK_MODES} 之一: {self.mask_mode}')
        if self.dtype not in DTYPES:
            raise ConfigError(f'model.dtype 必须是 {DTYPES} 之一: {self.dtype}')
        self.threshold = float(self.threshold)
        if np.isnan(self.threshold):
            raise ConfigError('model.threshold 不能为 NaN')

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'ModelConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'未知的模型配置项: {unknown[0]}')
        return cls(**data)


class MPSModel(PreferenceScorer):
    """
    多维偏好评分模型

    参数按固定顺序登记：文本编码器、图像编码器、偏好头，全部由同一个随机数生成器初始化。
    """

    def __init__(self, config: ModelConfig, vocabulary: Vocabulary, rng: np.random.Generator = None):
        self.config = config
        self.vocabulary = vocabulary
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params = ModelParams(np.dtype(config.dtype))
        self.text_encoder = TextEncoder(self.params, len(vocabulary), config.width, config.depth,
                                        config.heads, config.max_length, rng)
        self.image_encoder = ImageEncoder(self.params, config.image_size, config.channels, config.patch_size,
                                          config.width, config.depth, config.heads, rng)
        self.head = PreferenceHead(self.params, config.width, config.cross_heads, rng,
                                   threshold=config.threshold, mask_mode=config.mask_mode,
                                   straight_through=config.straight_through,
                                   soft_scale=config.soft_mask_scale, fusion=config.fusion)
        logger.debug(f'MPS 模型: {len(self.params)} 个参数张量，共 {self.params.size} 个参数')

    @property
    def name(self) -> str:
        return 'mps'

    @property
    def uses_condition(self) -> bool:
        return self.config.fusion == 'cross_attention' and self.config.mask_mode != 'off'

    # ─── 编码 ──────────────────────────────────────────

    def encode_prompts(self, texts: Sequence[str]) -> Tuple[Tensor, np.ndarray]:
        return encode_texts(texts, self.vocabulary, self.text_encoder)

    def encode_pixels(self, pixels: np.ndarray) -> Tensor:
        return encode_images(pixels, self.image_encoder)

    def condition_features(self, condition: Condition) -> Tensor:
        """X_c，形状 (1, n_c, n_d)，在批内共享"""
        spec = condition if isinstance(condition, ConditionSpec) else ConditionSpec.for_dimension(condition)
        ids, _ = pad_sequences([tokenize(spec.text, self.vocabulary, self.config.max_length)],
                               self.vocabulary.pad_id)
        return self.text_encoder(ids)

    # ─── 前向 ──────────────────────────────────────────

    def forward(self, texts: Sequence[str], pixels: np.ndarray, condition: Condition,
                keep_fusion: bool = False) -> Tuple[Tensor, Optional[FusionOutput]]:
        """
        一批 (提示词, 图像) 在同一条件下的得分

        keep_fusion 为真时总是计算条件掩码（mask_mode=off 也计算，仅用于导出）。
        """
        pixels = np.asarray(pixels)
        if len(texts) != pixels.shape[0]:
            raise ShapeError(f'提示词数 {len(texts)} 与图像数 {pixels.shape[0]} 不一致')
        x_t, lengths = self.encode_prompts(texts)
        x_v = self.encode_pixels(pixels)
        x_c = self.condition_features(condition) if (self.uses_condition or keep_fusion) else None
        if keep_fusion and self.config.fusion == 'cross_attention':
            fusion = self.head.fuse(x_v, x_t, x_c, lengths)
            return score_from_rows(fusion.f_vt, fusion.f_t, self.head.cross.alpha), fusion
        return self.head(x_v, x_t, x_c, lengths)

    def pair_scores(self, prompt_texts: Sequence[str], prompt_index: np.ndarray, pixels: np.ndarray,
                    dimensions: Sequence[str]) -> Tensor:
        """
        训练用批量前向

        Args:
            prompt_texts: 批内去重后的提示词
            prompt_index: (P,) 每个图像对的提示词下标
            pixels: (2P, H, W, C)，依次为 y₁⁰, y₂⁰, y₁¹, y₂¹, ...
            dimensions: C 个在训练范围内的维度

        Returns:
            (P, C, 2) 的得分张量
        """
        n_pairs = len(prompt_index)
        if pixels.shape[0] != 2 * n_pairs:
            raise ShapeError(f'图像数 {pixels.shape[0]} 应为图像对数 {n_pairs} 的两倍')
        x_t_unique, lengths_unique = self.encode_prompts(prompt_texts)
        item_prompt = np.repeat(np.asarray(prompt_index), 2)
        x_t = T.take(x_t_unique, item_prompt)
        lengths = lengths_unique[item_prompt]
        x_v = self.encode_pixels(pixels)

        per_condition = []
        for dimension in dimensions:
            x_c = self.condition_features(dimension) if self.uses_condition else None
            scores, _ = self.head(x_v, x_t, x_c, lengths)
            per_condition.append(T.reshape(scores, (1, n_pairs, 2)))
        stacked = T.concat(per_condition, axis=0)
        return T.transpose(stacked, (1, 0, 2))

    def score_items(self, texts: Sequence[str], pixels: np.ndarray, conditions: Sequence[Condition]) -> Tensor:
        """
        每个样本可以有不同条件：按条件分组前向，再按原顺序还原

        Returns:
            (B,) 的得分张量
        """
        if not (len(texts) == len(conditions) == np.asarray(pixels).shape[0]):
            raise ShapeError('提示词、图像与条件的数量必须一致')
        groups: Dict[str, List[int]] = {}
        originals = []
        for i, condition in enumerate(conditions):
            key = condition.name if isinstance(condition, ConditionSpec) else parse_dimension(condition).value
            originals.append(condition)
            groups.setdefault(key, []).append(i)
        parts, order = [], []
        for key, members in groups.items():
            scores, _ = self.forward([texts[i] for i in members], np.asarray(pixels)[members],
                                     originals[members[0]])
            parts.append(scores)
            order.extend(members)
        inverse = np.argsort(np.asarray(order), kind='stable')
        return T.take(T.concat(parts, axis=0), inverse)

    # ─── PreferenceScorer ─────────────────────────────

    def score_images(self, prompt: Prompt, images: Sequence[ImageRecord], dimension: str) -> np.ndarray:
        pixels = np.stack([im.pixels for im in images])
        scores, _ = self.forward([prompt.text] * len(images), pixels, dimension)
        return scores.data.astype(np.float64)

    def score_pair_chunk(self, pairs: Sequence[PreferencePair], dataset: PreferenceDataset,
                         dimension: str) -> np.ndarray:
        texts, pixels = [], []
        for pair in pairs:
            text = dataset.prompt(pair.prompt_id).text
            texts.extend([text, text])
            pixels.extend([dataset.pixels(pair.y1), dataset.pixels(pair.y2)])
        scores, _ = self.forward(texts, np.stack(pixels), dimension)
        return scores.data.astype(np.float64).reshape(len(pairs), 2)

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(json.dumps(self.config.to_dict(), sort_keys=True).encode('utf-8'))
        digest.update('\n'.join(self.vocabulary.tokens).encode('utf-8'))
        digest.update(self.params.flatten().astype('<f4').tobytes())
        return digest.hexdigest()[:16]


def mps_score(prompt: str, pixels: np.ndarray, condition: Condition, model: MPSModel) -> float:
    """S(x, y | c)"""
    scores, _ = model.forward([prompt], np.asarray(pixels)[None], condition)
    return scores.item()
