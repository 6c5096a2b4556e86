"""
训练循环

每一步: 对批内每个图像对在所有训练维度上前向 → KL 目标 → 反向 → AdamW 更新（预热学习率）。
同一个随机数生成器先初始化模型，再抽取每轮的批次顺序，因此相同配置与数据得到逐字节相同的检查点。
"""

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from config import DIMENSIONS
from utils.file_utils import PathLike
from utils.logger import TrainingLog

from .checkpoint import save_checkpoint
from .conditions import parse_dimensions
from .dataset import PreferenceDataset, PreferencePair
from .errors import ConfigError, EvaluationError, NonFiniteError, OptimizerError, TrainingError
from .evaluator import preference_accuracy
from .loss import pair_probability_tensor, preference_loss
from .model import ModelConfig, MPSModel
from .optim import AdamW, lr_schedule
from .tensor import ComputeGraph, backward
from .tokenizer import build_vocabulary, save_vocabulary

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    peak_lr: float = 1e-3
    warmup_steps: int = 100
    seed: int = 0
    dimensions: List[str] = field(default_factory=lambda: list(DIMENSIONS))
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    eval_every: int = 200
    checkpoint_every: int = 500
    log_every: int = 1

    def __post_init__(self):
        if isinstance(self.steps, bool) or not isinstance(self.steps, int) or self.steps < 1:
            raise ConfigError(f'train.steps 必须 ≥ 1: {self.steps!r}')
        if self.batch_size < 1:
            raise ConfigError(f'train.batch_size 必须 ≥ 1: {self.batch_size}')
        if self.warmup_steps < 1:
            raise ConfigError(f'train.warmup_steps 必须 ≥ 1: {self.warmup_steps}')
        if not self.peak_lr >= 0:
            raise ConfigError(f'train.peak_lr 不能为负: {self.peak_lr}')
        self.dimensions = [d.value for d in parse_dimensions(self.dimensions)]
        self.betas = tuple(self.betas)
        for name in ('eval_every', 'checkpoint_every', 'log_every'):
            if getattr(self, name) < 0:
                raise ConfigError(f'train.{name} 不能为负')

    def schedule(self) -> Callable[[int], float]:
        return lambda step: lr_schedule(step, self.warmup_steps, self.peak_lr)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['betas'] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> 'TrainConfig':
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f'未知的训练配置项: {unknown[0]}')
        return cls(**data)


@dataclass
class TrainBatch:
    """
    prompt_texts: 批内去重后的提示词；prompt_index: (P,) 每个图像对对应的提示词下标；
    pixels: (2P, H, W, C)；labels: (P, C, 2)
    """
    prompt_texts: List[str]
    prompt_index: np.ndarray
    pixels: np.ndarray
    labels: np.ndarray
    dimensions: List[str]

    def __len__(self) -> int:
        return len(self.prompt_index)


@dataclass
class TrainResult:
    model: MPSModel
    final_path: Optional[Path]
    best_path: Optional[Path]
    best_accuracy: Optional[float]
    losses: List[float]


def make_batch(dataset: PreferenceDataset, pairs: Sequence[PreferencePair], dimensions: Sequence[str]) -> TrainBatch:
    if not pairs:
        raise TrainingError('批次为空')
    texts: List[str] = []
    slots: Dict[str, int] = {}
    index, pixels, labels = [], [], []
    for pair in pairs:
        if pair.prompt_id not in slots:
            slots[pair.prompt_id] = len(texts)
            texts.append(dataset.prompt(pair.prompt_id).text)
        index.append(slots[pair.prompt_id])
        pixels.extend([dataset.pixels(pair.y1), dataset.pixels(pair.y2)])
        labels.append([pair.label(d).as_list() for d in dimensions])
    return TrainBatch(texts, np.asarray(index), np.stack(pixels), np.asarray(labels, dtype=np.float64),
                      list(dimensions))


def train_step(model: MPSModel, batch: TrainBatch, optimizer: AdamW, step: int,
               schedule: Callable[[int], float]) -> float:
    """一次前向、一次反向、一次参数更新，返回该步的 loss"""
    lr = schedule(step)
    optimizer.zero_grad()
    with ComputeGraph() as graph:
        scores = model.pair_scores(batch.prompt_texts, batch.prompt_index, batch.pixels, batch.dimensions)
        loss = preference_loss(pair_probability_tensor(scores), batch.labels)
    value = loss.item()
    if not math.isfinite(value):
        raise NonFiniteError(f'第 {step} 步 loss 非有限: {value}')
    backward(loss, graph)
    optimizer.step(lr)
    return value


def validation_accuracy(model: MPSModel, dataset: PreferenceDataset, pairs: Sequence[PreferencePair],
                        dimensions: Sequence[str], threads: int = 1) -> Dict[str, float]:
    """各维度验证准确率（排除平局），全是平局的维度不参与"""
    result = {}
    for dim in dimensions:
        try:
            result[dim] = preference_accuracy(model, pairs, dataset, dim, threads=threads)
        except EvaluationError:
            logger.warning(f'验证集在 {dim} 维度上没有非平局图像对')
    return result


def _batches(rng: np.random.Generator, n: int, batch_size: int):
    """无限迭代批次下标：每轮重新打乱，轮末不足一批时与下一轮拼接"""
    pending = np.zeros(0, dtype=np.int64)
    while True:
        while len(pending) < batch_size:
            pending = np.concatenate([pending, rng.permutation(n)])
        yield pending[:batch_size]
        pending = pending[batch_size:]


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: PreferenceDataset,
          out_dir: PathLike = None, threads: int = 1) -> TrainResult:
    """
    训练一个 MPS 模型

    out_dir 下写入 vocab.txt、train_log.jsonl、周期检查点 step-NNNNNN、final 与 best。
    没有验证集时 best 与 final 相同。
    threads 只用于验证集打分，不影响训练结果。
    """
    train_pairs = dataset.split('train')
    if not train_pairs:
        raise TrainingError('训练集为空')
    val_pairs = dataset.split('val')
    dims = list(train_config.dimensions)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None and model_config.dtype != 'float32':
        raise ConfigError(f'写检查点的训练只支持 float32 模型: model.dtype={model_config.dtype}')

    rng = np.random.default_rng(train_config.seed)
    corpus = [dataset.prompts[pid].text for pid in sorted(dataset.prompts)]
    vocabulary = build_vocabulary(corpus, model_config.vocab_size)
    model = MPSModel(model_config, vocabulary, rng)
    optimizer = AdamW(model.params, weight_decay=train_config.weight_decay,
                      betas=train_config.betas, eps=train_config.eps)
    schedule = train_config.schedule()
    log = TrainingLog(out_dir / 'train_log.jsonl' if out_dir else None)
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_vocabulary(vocabulary, out_dir / 'vocab.txt')
    logger.info(f'开始训练: {len(train_pairs)} 个训练图像对, {len(val_pairs)} 个验证图像对, '
                f'维度 {dims}, {train_config.steps} 步',
                extra={'fields': {'params': model.params.size, 'seed': train_config.seed}})

    def _save(name: str, step: int) -> Optional[Path]:
        if out_dir is None:
            return None
        path = out_dir / name
        save_checkpoint(model, path, train_config.to_dict(), step, rng.bit_generator.state)
        return path

    last_good: Optional[Path] = None
    best_path: Optional[Path] = None
    best_accuracy: Optional[float] = None
    batches = _batches(rng, len(train_pairs), train_config.batch_size)

    for step in range(1, train_config.steps + 1):
        batch = make_batch(dataset, [train_pairs[i] for i in next(batches)], dims)
        try:
            loss = train_step(model, batch, optimizer, step, schedule)
        except (NonFiniteError, OptimizerError) as e:
            log.flush()
            raise TrainingError(f'第 {step} 步训练中止: {e}', str(last_good) if last_good else None) from e

        val = None
        if val_pairs and train_config.eval_every and (step % train_config.eval_every == 0
                                                      or step == train_config.steps):
            val = validation_accuracy(model, dataset, val_pairs, dims, threads)
            if val:
                mean_accuracy = float(np.mean(list(val.values())))
                if best_accuracy is None or mean_accuracy > best_accuracy:
                    best_accuracy = mean_accuracy
                    best_path = _save('best', step) or best_path
                logger.info(f'step {step}: 验证准确率 {val}', extra={'fields': {'step': step, 'val': val}})

        if val is not None or (train_config.log_every and step % train_config.log_every == 0):
            log.log_step(step, schedule(step), loss, val)

        if out_dir and train_config.checkpoint_every and step % train_config.checkpoint_every == 0:
            last_good = _save(f'step-{step:06d}', step)
            log.flush()

    final_path = _save('final', train_config.steps)
    if best_accuracy is None:
        best_path = _save('best', train_config.steps)
    log.flush()
    logger.info(f'训练完成: 最终 loss {log.losses[-1] if log.losses else float("nan"):.6f}',
                extra={'fields': {'best_val_accuracy': best_accuracy}})
    return TrainResult(model, final_path, best_path, best_accuracy, log.losses)


def train_separately(model_config: ModelConfig, train_config: TrainConfig, dataset: PreferenceDataset,
                     out_dir: PathLike = None, threads: int = 1) -> Dict[str, TrainResult]:
    """每个维度单独训练一个模型，写入 out_dir/<维度>/"""
    results = {}
    for dim in train_config.dimensions:
        config = TrainConfig.from_dict({**train_config.to_dict(), 'dimensions': [dim]})
        sub_dir = Path(out_dir) / dim if out_dir is not None else None
        logger.info(f'单独训练维度 {dim}')
        results[dim] = train(model_config, config, dataset, sub_dir, threads)
    return results
