"""
评估：偏好准确率、Pearson R、分维度报告、注意力导出与生成器基准
"""

import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import ATTENTION_SCHEMA_VERSION, DIMENSIONS, REPORT_SCHEMA_VERSION
from utils.file_utils import PathLike, atomic_write_text

from .base_scorer import DEFAULT_CHUNK_SIZE, PreferenceScorer
from .conditions import parse_dimension
from .dataset import PreferenceDataset, PreferencePair
from .encoders import token_strings
from .errors import EvaluationError
from .loss import pair_probabilities
from .model import MPSModel

logger = logging.getLogger(__name__)

TIE_POLICIES = ('exclude', 'half-credit')


@dataclass
class EvalConfig:
    split: str = 'test'
    tie_policy: str = 'exclude'
    batch_size: int = DEFAULT_CHUNK_SIZE

    def __post_init__(self):
        if self.tie_policy not in TIE_POLICIES:
            raise EvaluationError(f'tie_policy 必须是 {TIE_POLICIES} 之一: {self.tie_policy}')
        if self.batch_size < 1:
            raise EvaluationError(f'eval.batch_size 必须 ≥ 1: {self.batch_size}')


# ─── 指标 ──────────────────────────────────────────────


def accuracy_from_scores(scores: np.ndarray, labels: np.ndarray,
                         tie_policy: str = 'exclude') -> Tuple[float, int, int]:
    """
    由 (N, 2) 得分与 (N, 2) 软标签计算准确率

    预测胜者为 argmax（同分取第一张），真实胜者为软标签的 argmax。
    标签平局按 tie_policy 处理：exclude 丢弃，half-credit 计 0.5 分。

    Returns:
        (准确率 %, 参与计算的图像对数, 标签平局数)
    """
    if tie_policy not in TIE_POLICIES:
        raise EvaluationError(f'tie_policy 必须是 {TIE_POLICIES} 之一: {tie_policy}')
    scores = np.asarray(scores, dtype=np.float64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 2)
    if scores.shape != labels.shape:
        raise EvaluationError(f'得分 {scores.shape} 与标签 {labels.shape} 数量不一致')
    predicted = np.argmax(scores, axis=1)
    truth = np.argmax(labels, axis=1)
    ties = labels[:, 0] == labels[:, 1]
    correct = (predicted == truth).astype(np.float64)
    n_ties = int(ties.sum())

    if tie_policy == 'exclude':
        considered = int((~ties).sum())
        if considered == 0:
            raise EvaluationError('排除平局后没有可评估的图像对')
        return 100.0 * float(correct[~ties].sum()) / considered, considered, n_ties

    if len(labels) == 0:
        raise EvaluationError('没有可评估的图像对')
    credit = np.where(ties, 0.5, correct)
    return 100.0 * float(credit.sum()) / len(labels), len(labels), n_ties


def _labels(pairs: Sequence[PreferencePair], dimension: str) -> np.ndarray:
    return np.array([pair.label(dimension).as_list() for pair in pairs], dtype=np.float64).reshape(-1, 2)


def preference_accuracy(scorer: PreferenceScorer, pairs: Sequence[PreferencePair], dataset: PreferenceDataset,
                        dimension: str, tie_policy: str = 'exclude', threads: int = 1) -> float:
    """偏好准确率（%）"""
    dimension = parse_dimension(dimension).value
    scores = scorer.score_pairs(pairs, dataset, dimension, threads=threads)
    accuracy, _, _ = accuracy_from_scores(scores, _labels(pairs, dimension), tie_policy)
    return accuracy


def pearson_r(predicted: Sequence[float], target: Sequence[float]) -> float:
    """
    Pearson 积矩相关系数

    目标方差为 0 时报错；预测方差为 0（常数打分器）时相关系数记为 0。
    """
    x = np.asarray(predicted, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvaluationError(f'预测与目标长度不一致: {x.shape} vs {y.shape}')
    if len(x) < 2:
        raise EvaluationError('至少需要 2 个样本才能计算相关系数')
    dy = y - y.mean()
    syy = float(np.dot(dy, dy))
    if syy == 0.0:
        raise EvaluationError('目标方差为 0，相关系数无定义')
    dx = x - x.mean()
    sxx = float(np.dot(dx, dx))
    if sxx == 0.0:
        logger.warning('预测方差为 0，相关系数记为 0')
        return 0.0
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def expected_teacher_accuracy(noise_rate: float) -> float:
    """
    标注噪声为 ρ 时教师模型的期望准确率（%）

    三位标注者独立以概率 ρ 翻转胜负，聚合后的 argmax 即多数票，
    至少两票正确的概率为 (1−ρ)³ + 3(1−ρ)²ρ。仅适用于 tie_band = 0。
    """
    if not 0.0 <= noise_rate < 1.0:
        raise EvaluationError(f'噪声率必须在 [0, 1) 内: {noise_rate}')
    keep = 1.0 - noise_rate
    return 100.0 * (keep ** 3 + 3 * keep ** 2 * noise_rate)


# ─── 报告 ──────────────────────────────────────────────


@dataclass
class DimensionResult:
    accuracy: float
    pearson_r: float
    pairs: int
    ties: int
    considered: int
    exclude_accuracy: Optional[float] = None
    half_credit_accuracy: Optional[float] = None


@dataclass
class EvalReport:
    """分维度准确率与 Pearson R"""
    split: str
    tie_policy: str
    dimensions: Dict[str, DimensionResult]
    scorer: str = ''
    config_fingerprint: str = ''
    checkpoint_fingerprint: str = ''
    schema_version: int = REPORT_SCHEMA_VERSION

    def __post_init__(self):
        for name, result in self.dimensions.items():
            if not 0.0 <= result.accuracy <= 100.0:
                raise EvaluationError(f'{name}: 准确率超出 [0, 100]: {result.accuracy}')
            if not -1.0 <= result.pearson_r <= 1.0:
                raise EvaluationError(f'{name}: 相关系数超出 [-1, 1]: {result.pearson_r}')

    def accuracy(self, dimension: str) -> float:
        return self.dimensions[dimension].accuracy

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['dimensions'] = {d: asdict(r) for d, r in self.dimensions.items()}
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'EvalReport':
        data = dict(data)
        if data.get('schema_version') != REPORT_SCHEMA_VERSION:
            raise EvaluationError(f'不支持的报告版本: {data.get("schema_version")}')
        data['dimensions'] = {d: DimensionResult(**r) for d, r in data['dimensions'].items()}
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + '\n'

    def save(self, path: PathLike):
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: PathLike) -> 'EvalReport':
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise EvaluationError(f'{path}: 报告无法解析 ({e})') from None
        return cls.from_dict(data)


def _other_policy(scores, labels, policy) -> Optional[float]:
    try:
        return accuracy_from_scores(scores, labels, policy)[0]
    except EvaluationError:
        return None


def per_dimension_report(scorer: PreferenceScorer, dataset: PreferenceDataset, split: str = 'test',
                         dimensions: Sequence[str] = DIMENSIONS, tie_policy: str = 'exclude',
                         threads: int = 1, chunk_size: int = DEFAULT_CHUNK_SIZE,
                         config_fingerprint: str = '') -> EvalReport:
    """在一个划分上对每个维度计算两种平局策略的准确率与 Pearson R"""
    pairs = dataset.split(split)
    if not pairs:
        raise EvaluationError(f'划分 {split} 中没有图像对')
    results = {}
    for dim in dimensions:
        dim = parse_dimension(dim).value
        scores = scorer.score_pairs(pairs, dataset, dim, threads=threads, chunk_size=chunk_size)
        labels = _labels(pairs, dim)
        accuracy, considered, ties = accuracy_from_scores(scores, labels, tie_policy)
        predicted = [pair_probabilities(s1, s2)[0] for s1, s2 in scores]
        results[dim] = DimensionResult(
            accuracy=accuracy,
            pearson_r=pearson_r(predicted, labels[:, 0]),
            pairs=len(pairs),
            ties=ties,
            considered=considered,
            exclude_accuracy=_other_policy(scores, labels, 'exclude'),
            half_credit_accuracy=_other_policy(scores, labels, 'half-credit'),
        )
        logger.info(f'{scorer.name} {dim}: 准确率 {accuracy:.2f}%，R={results[dim].pearson_r:.4f}',
                    extra={'fields': {'dimension': dim, 'accuracy': accuracy}})
    return EvalReport(split=split, tie_policy=tie_policy, dimensions=results, scorer=scorer.name,
                      config_fingerprint=config_fingerprint, checkpoint_fingerprint=scorer.fingerprint())


# ─── 注意力导出 ────────────────────────────────────────


def export_attention(model: MPSModel, prompt: str, pixels: np.ndarray, condition: str,
                     path: PathLike = None) -> Dict:
    """
    导出单个 (提示词, 图像, 条件) 的条件掩码与注意力

    token_values 为二值化前 M_c 在每个提示词词元上的取值，keep 为是否保留；
    cls_attention 为 CLS 行对各词元的注意力（头平均）；patch_grid 为每个图像块与 CLS 行
    在词元分布上的重合度 Σ_j A[i,j]·A[0,j]，按图像块网格排布。
    """
    if model.config.fusion != 'cross_attention':
        raise EvaluationError('base 融合没有交叉注意力，无法导出')
    dimension = parse_dimension(condition).value
    scores, fusion = model.forward([prompt], np.asarray(pixels)[None], dimension, keep_fusion=True)
    tokens = token_strings(prompt, model.vocabulary, model.config.max_length)
    n_p = len(tokens)

    values = fusion.condition_values[0, 0, :n_p]
    if model.config.mask_mode == 'hard':
        keep = values >= model.config.threshold
    else:
        keep = np.ones(n_p, dtype=bool)
    attention = fusion.attention[0].astype(np.float64).mean(axis=0)[:, :n_p]
    cls_row = attention[0]
    grid = model.image_encoder.grid
    heat = (attention[1:] @ cls_row).reshape(grid, grid)

    record = {
        'schema_version': ATTENTION_SCHEMA_VERSION,
        'prompt': prompt,
        'condition': dimension,
        'fusion': model.config.fusion,
        'mask_mode': model.config.mask_mode,
        'threshold': model.config.threshold,
        'score': scores.item(),
        'tokens': tokens,
        'token_values': [float(v) for v in values],
        'keep': [bool(k) for k in keep],
        'fallback_rows': sorted(fusion.fallback_rows[0]),
        'cls_attention': [float(a) for a in cls_row],
        'patch_grid': heat.tolist(),
    }
    if path is not None:
        atomic_write_text(path, json.dumps(record, ensure_ascii=False, indent=2) + '\n')
        logger.info(f'注意力已导出到 {path}')
    return record


# ─── 生成器基准 ────────────────────────────────────────


def benchmark_generators(scorer: PreferenceScorer, dataset: PreferenceDataset,
                         dimensions: Sequence[str] = DIMENSIONS,
                         threads: int = 1) -> Dict[str, Dict[str, Dict[str, float]]]:
    """
    每个 (生成器, 类别, 维度) 上全部图像的平均得分

    threads > 1 时各提示词在线程池中打分，累加仍按提示词 id 顺序进行，结果与线程数无关。

    Returns:
        {generator: {category: {dimension: mean_score}}}
    """
    if threads < 1:
        raise EvaluationError(f'threads 必须 ≥ 1: {threads}')
    dimensions = [parse_dimension(d).value for d in dimensions]
    prompt_ids = [pid for pid in sorted(dataset.prompts) if dataset.images_for_prompt(pid)]

    def _score_prompt(prompt_id: str) -> Dict[str, np.ndarray]:
        images = dataset.images_for_prompt(prompt_id)
        return {dim: scorer.score_images(dataset.prompt(prompt_id), images, dim) for dim in dimensions}

    if threads == 1:
        scored = [_score_prompt(pid) for pid in prompt_ids]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scored = list(pool.map(_score_prompt, prompt_ids))

    sums = defaultdict(lambda: defaultdict(lambda: defaultdict(float)))
    counts = defaultdict(lambda: defaultdict(int))
    for prompt_id, per_dim in zip(prompt_ids, scored):
        images = dataset.images_for_prompt(prompt_id)
        prompt = dataset.prompt(prompt_id)
        for dim in dimensions:
            for image, score in zip(images, per_dim[dim]):
                sums[_generator_key(image.generator)][prompt.category][dim] += float(score)
        for image in images:
            counts[_generator_key(image.generator)][prompt.category] += 1

    result = {}
    for generator in sorted(sums):
        result[generator] = {
            category: {dim: sums[generator][category][dim] / counts[generator][category]
                       for dim in sums[generator][category]}
            for category in sorted(sums[generator])
        }
    return result


def _generator_key(generator: Optional[int]) -> str:
    return 'unknown' if generator is None else f'g{generator}'
