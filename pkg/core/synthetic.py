"""
植入教师的合成数据生成器

每张图像有 4 个隐藏的教师质量隐变量 q ∈ [0,1]⁴（顺序同 DIMENSIONS），由带相关矩阵的
高斯 copula 加上所属生成器的偏移得到。像素统计量是 q 的单调函数:
    亮度 ↑ overall；色度 ↑ aesthetics；
    提示词主体条纹相对干扰条纹的混合权重 ↑ alignment；
    条纹边缘锐度 ↑、高频噪声 ↓ detail。
三位模拟标注者比较 q 并以概率 ρ 翻转胜负，再经 aggregate_annotators 得到软标签。
"""

import itertools
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import ndtr

from config import (CATEGORY_SUBJECTS, CONDITION_WORDS, DIMENSIONS, PROMPT_ADJECTIVES, PROMPT_CATEGORIES,
                    PROMPT_PLACES, PROMPT_PREPOSITIONS)

from .annotation import AnnotationTriple, PreferenceLabel, aggregate_annotators
from .dataset import ImageRecord, PreferenceDataset, PreferencePair, Prompt, split_dataset
from .errors import ConfigError

logger = logging.getLogger(__name__)

# overall / aesthetics 高度相关，detail 与其余维度几乎无关
DEFAULT_CORRELATION = (
    (1.0, 0.8, 0.5, 0.1),
    (0.8, 1.0, 0.3, 0.0),
    (0.5, 0.3, 1.0, 0.0),
    (0.1, 0.0, 0.0, 1.0),
)

PATTERN_AMPLITUDE = 0.15
NOISE_SCALE = 0.15


@dataclass
class GeneratorConfig:
    seed: int = 0
    prompts_per_category: int = 100
    images_per_prompt: int = 2
    same_model_fraction: float = 0.2
    noise_rate: float = 0.0
    tie_band: float = 0.0
    generator_count: int = 6
    split_fractions: List[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    image_size: int = 32
    channels: int = 3
    teacher_seed: Optional[int] = None
    correlation: Optional[List[List[float]]] = None
    generator_spread: float = 0.5

    def __post_init__(self):
        if self.prompts_per_category < 1:
            raise ConfigError(f'data.prompts_per_category 必须 ≥ 1: {self.prompts_per_category}')
        if not 2 <= self.images_per_prompt <= 4:
            raise ConfigError(f'data.images_per_prompt 必须在 2-4 之间: {self.images_per_prompt}')
        if not 0.0 <= self.same_model_fraction <= 1.0:
            raise ConfigError(f'data.same_model_fraction 必须在 [0, 1] 内: {self.same_model_fraction}')
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError(f'data.noise_rate 必须在 [0, 1) 内: {self.noise_rate}')
        if not self.tie_band >= 0.0:
            raise ConfigError(f'data.tie_band 不能为负: {self.tie_band}')
        if self.generator_count < self.images_per_prompt:
            raise ConfigError(f'data.generator_count={self.generator_count} 小于每条提示词的图像数')
        if self.generator_spread < 0:
            raise ConfigError(f'data.generator_spread 不能为负: {self.generator_spread}')
        self.split_fractions = [float(f) for f in self.split_fractions]
        self.cholesky()

    @property
    def correlation_matrix(self) -> np.ndarray:
        matrix = np.asarray(self.correlation if self.correlation is not None else DEFAULT_CORRELATION,
                            dtype=np.float64)
        if matrix.shape != (len(DIMENSIONS), len(DIMENSIONS)):
            raise ConfigError(f'data.correlation 必须是 4×4 矩阵: {matrix.shape}')
        return matrix

    def cholesky(self) -> np.ndarray:
        matrix = self.correlation_matrix
        if not np.allclose(matrix, matrix.T) or not np.allclose(np.diag(matrix), 1.0):
            raise ConfigError('data.correlation 必须对称且对角线为 1')
        try:
            return np.linalg.cholesky(matrix)
        except np.linalg.LinAlgError:
            raise ConfigError('data.correlation 不是正定矩阵') from None

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> 'GeneratorConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'未知的数据配置项: {unknown[0]}')
        return cls(**data)


# ─── 提示词 ────────────────────────────────────────────


def subject_pattern(subject_id: int) -> Tuple[float, float]:
    """主体编号 → (条纹方向, 每幅图的条纹周期数)"""
    return math.pi * (subject_id % 7) / 7, 2.0 + (subject_id // 7) % 3


def _all_subjects() -> List[Tuple[str, str]]:
    return [(category, subject) for category in PROMPT_CATEGORIES for subject in CATEGORY_SUBJECTS[category]]


def make_prompt_text(subject: str, rng: np.random.Generator) -> str:
    adjective = PROMPT_ADJECTIVES[rng.integers(len(PROMPT_ADJECTIVES))]
    article = 'an' if adjective[0] in 'aeiou' else 'a'
    preposition = PROMPT_PREPOSITIONS[rng.integers(len(PROMPT_PREPOSITIONS))]
    place = PROMPT_PLACES[rng.integers(len(PROMPT_PLACES))]
    attributes = [' '.join(rng.choice(CONDITION_WORDS[d], size=2, replace=False))
                  for d in ('aesthetics', 'detail', 'alignment')]
    return f'{article} {adjective} {subject} {preposition} {place}, ' + ', '.join(attributes)


# ─── 图像 ──────────────────────────────────────────────


def stripes(size: int, angle: float, frequency: float, sharpness: float) -> np.ndarray:
    """取值 [-1, 1] 的条纹，sharpness 越大边缘越陡"""
    yy, xx = np.mgrid[0:size, 0:size] / size
    phase = 2.0 * math.pi * frequency * (xx * math.cos(angle) + yy * math.sin(angle))
    return np.tanh(sharpness * np.sin(phase)) / math.tanh(sharpness)


def hue_vector(hue: float, channels: int) -> np.ndarray:
    base = np.array([math.cos(hue), math.cos(hue - 2 * math.pi / 3), math.cos(hue + 2 * math.pi / 3)])
    return np.resize(base, channels)


def render_image(q: Sequence[float], target: Tuple[float, float], distractor: Tuple[float, float],
                 hue: float, size: int, channels: int, rng: np.random.Generator) -> np.ndarray:
    """由教师隐变量生成 size×size×channels、取值 [0,1] 的像素"""
    overall, aesthetics, alignment, detail = (float(v) for v in q)
    sharpness = 1.0 + 9.0 * detail
    pattern = (alignment * stripes(size, *target, sharpness)
               + (1.0 - alignment) * stripes(size, *distractor, sharpness))
    brightness = 0.25 + 0.5 * overall
    chroma = 0.05 + 0.3 * aesthetics
    noise = rng.standard_normal((size, size, channels)) * (1.0 - detail) * NOISE_SCALE
    pixels = (brightness + chroma * hue_vector(hue, channels)[None, None, :]
              + PATTERN_AMPLITUDE * pattern[..., None] + noise)
    return np.clip(pixels, 0.0, 1.0).astype(np.float32)


# ─── 标注 ──────────────────────────────────────────────


def teacher_outcome(q1: float, q2: float, tie_band: float = 0.0) -> int:
    """1: y₁ 更好；-1: y₂ 更好；0: 平局"""
    delta = q1 - q2
    if delta == 0 or abs(delta) < tie_band:
        return 0
    return 1 if delta > 0 else -1


def teacher_label(q1: float, q2: float, tie_band: float = 0.0) -> PreferenceLabel:
    """无噪声标签"""
    outcome = teacher_outcome(q1, q2, tie_band)
    return PreferenceLabel(*{1: (1.0, 0.0), -1: (0.0, 1.0), 0: (0.5, 0.5)}[outcome])


def simulate_annotators(q1: float, q2: float, noise_rate: float, tie_band: float,
                        rng: np.random.Generator) -> Tuple[Tuple[int, int], ...]:
    """
    三位标注者的 1-5 分

    每位独立以概率 noise_rate 翻转胜负（平局保持平局）；分数以两张图平均质量
    mid = clip(round(1 + 4·q̄), 2, 4) 为中心，胜者 mid+1、负者 mid−1，平局同为 mid。
    """
    outcome = teacher_outcome(q1, q2, tie_band)
    mid = int(np.clip(np.rint(1.0 + 4.0 * (q1 + q2) / 2.0), 2, 4))
    scores = []
    for _ in range(3):
        flip = rng.random() < noise_rate
        vote = -outcome if flip else outcome
        scores.append({1: (mid + 1, mid - 1), -1: (mid - 1, mid + 1), 0: (mid, mid)}[vote])
    return tuple(scores)


# ─── 数据集 ────────────────────────────────────────────


def generator_offsets(cfg: GeneratorConfig) -> np.ndarray:
    """每个合成生成器在 4 个维度上的质量偏移"""
    teacher_seed = cfg.seed if cfg.teacher_seed is None else cfg.teacher_seed
    rng = np.random.default_rng([teacher_seed, 1])
    return rng.normal(0.0, cfg.generator_spread, size=(cfg.generator_count, len(DIMENSIONS)))


def generate_synthetic_dataset(cfg: GeneratorConfig) -> PreferenceDataset:
    """
    生成提示词、图像、图像对与标注

    每条提示词使用由 (seed, 提示词序号) 派生的独立随机数生成器，结果与生成顺序无关。
    同一提示词的全部图像两两成对。
    """
    chol = cfg.cholesky()
    offsets = generator_offsets(cfg)
    subjects = _all_subjects()
    per_category = {c: [i for i, (cat, _) in enumerate(subjects) if cat == c] for c in PROMPT_CATEGORIES}

    prompts: Dict[str, Prompt] = {}
    images: Dict[str, ImageRecord] = {}
    pairs: List[PreferencePair] = []
    annotations: List[AnnotationTriple] = []

    prompt_number = 0
    for category in PROMPT_CATEGORIES:
        for _ in range(cfg.prompts_per_category):
            rng = np.random.default_rng([cfg.seed, prompt_number])
            subject_id = int(rng.choice(per_category[category]))
            prompt = Prompt(f'p{prompt_number:05d}', make_prompt_text(subjects[subject_id][1], rng), category)
            prompts[prompt.id] = prompt

            if rng.random() < cfg.same_model_fraction:
                generators = [int(rng.integers(cfg.generator_count))] * cfg.images_per_prompt
            else:
                generators = [int(g) for g in rng.choice(cfg.generator_count, size=cfg.images_per_prompt,
                                                         replace=False)]

            records = []
            for generator in generators:
                image_seed = int(rng.integers(2 ** 31))
                image_rng = np.random.default_rng(image_seed)
                z = chol @ image_rng.standard_normal(len(DIMENSIONS)) + offsets[generator]
                q = np.clip(ndtr(z), 0.0, 1.0)
                distractor_id = int(image_rng.choice([i for i in range(len(subjects)) if i != subject_id]))
                pixels = render_image(q, subject_pattern(subject_id), subject_pattern(distractor_id),
                                      float(image_rng.uniform(0, 2 * math.pi)), cfg.image_size, cfg.channels,
                                      image_rng)
                image_id = f'i{len(images):06d}'
                record = ImageRecord(image_id, prompt.id, f'pixels/{image_id}.bin', image_seed,
                                     tuple(float(v) for v in q), generator, pixels)
                images[image_id] = record
                records.append(record)

            for (a, ga), (b, gb) in itertools.combinations(zip(records, generators), 2):
                pair_id = f'pair{len(pairs):06d}'
                labels = {}
                for d, dim in enumerate(DIMENSIONS):
                    triple = AnnotationTriple(pair_id, dim, simulate_annotators(
                        a.teacher_q[d], b.teacher_q[d], cfg.noise_rate, cfg.tie_band, rng))
                    annotations.append(triple)
                    labels[dim] = aggregate_annotators(triple)
                pairs.append(PreferencePair(pair_id, prompt.id, a.id, b.id, labels, 'train', ga == gb))
            prompt_number += 1

    pairs = split_dataset(pairs, cfg.split_fractions, cfg.seed)
    dataset = PreferenceDataset(prompts, images, pairs, annotations)
    same_model = sum(p.same_model for p in pairs)
    logger.info(f'合成数据集: {len(prompts)} 条提示词, {len(images)} 张图像, {len(pairs)} 个图像对 '
                f'(同模型 {same_model})',
                extra={'fields': {'seed': cfg.seed, 'noise_rate': cfg.noise_rate}})
    return dataset
