"""
偏好数据集：数据结构、JSONL 读写、像素文件与划分
"""

import json
import logging
import math
import struct
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config import DIMENSIONS, PROMPT_CATEGORIES
from utils.file_utils import PathLike, atomic_write_bytes, atomic_write_text

from .annotation import AnnotationTriple, PreferenceLabel
from .errors import DatasetFormatError, SplitError

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')
PIXEL_HEADER = struct.Struct('<II')


@dataclass
class Prompt:
    id: str
    text: str
    category: str

    def __post_init__(self):
        if self.category not in PROMPT_CATEGORIES:
            raise DatasetFormatError(f'提示词 {self.id} 的类别不合法: {self.category}')
        if not self.text or not self.text.strip():
            raise DatasetFormatError(f'提示词 {self.id} 的文本为空')

    def to_dict(self) -> Dict:
        return {'id': self.id, 'text': self.text, 'category': self.category}


@dataclass
class ImageRecord:
    """图像元数据；pixels 在加载数据集时读入，不写入 JSONL"""
    id: str
    prompt_id: str
    pixels_path: str
    seed: int
    teacher_q: Optional[Tuple[float, ...]] = None
    generator: Optional[int] = None
    pixels: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.teacher_q is not None:
            self.teacher_q = tuple(float(q) for q in self.teacher_q)
            if len(self.teacher_q) != len(DIMENSIONS) or not all(0.0 <= q <= 1.0 for q in self.teacher_q):
                raise DatasetFormatError(f'图像 {self.id} 的 teacher_q 必须是 [0,1] 内的 4 个数')

    def to_dict(self) -> Dict:
        data = {'id': self.id, 'prompt_id': self.prompt_id, 'pixels_path': self.pixels_path, 'seed': self.seed}
        if self.teacher_q is not None:
            data['teacher_q'] = list(self.teacher_q)
        if self.generator is not None:
            data['generator'] = self.generator
        return data


@dataclass
class PreferencePair:
    pair_id: str
    prompt_id: str
    y1: str
    y2: str
    labels: Dict[str, PreferenceLabel]
    split: str = 'train'
    same_model: bool = False

    def __post_init__(self):
        if self.y1 == self.y2:
            raise DatasetFormatError(f'图像对 {self.pair_id} 的两张图像相同: {self.y1}')
        missing = [d for d in DIMENSIONS if d not in self.labels]
        if missing:
            raise DatasetFormatError(f'图像对 {self.pair_id} 缺少维度标签: {missing}')
        if self.split not in SPLITS:
            raise DatasetFormatError(f'图像对 {self.pair_id} 的划分标记不合法: {self.split}')

    def label(self, dimension: str) -> PreferenceLabel:
        return self.labels[dimension]

    def swapped(self) -> 'PreferencePair':
        """交换 y₁/y₂ 及全部标签"""
        return replace(self, y1=self.y2, y2=self.y1,
                       labels={d: lab.swapped() for d, lab in self.labels.items()})

    def to_dict(self) -> Dict:
        return {
            'pair_id': self.pair_id,
            'prompt_id': self.prompt_id,
            'y1': self.y1,
            'y2': self.y2,
            'labels': {d: self.labels[d].as_list() for d in DIMENSIONS},
            'split': self.split,
            'same_model': self.same_model,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'PreferencePair':
        labels = {d: PreferenceLabel.from_list(v) for d, v in data['labels'].items()}
        return cls(data['pair_id'], data['prompt_id'], data['y1'], data['y2'], labels,
                   data.get('split', 'train'), bool(data.get('same_model', False)))


@dataclass
class PreferenceDataset:
    prompts: Dict[str, Prompt]
    images: Dict[str, ImageRecord]
    pairs: List[PreferencePair]
    annotations: List[AnnotationTriple] = field(default_factory=list)

    def validate(self):
        """检查引用完整性：图像的提示词存在，图像对的两张图同属该提示词"""
        for image in self.images.values():
            if image.prompt_id not in self.prompts:
                raise DatasetFormatError(f'图像 {image.id} 引用了不存在的提示词 {image.prompt_id}')
        for pair in self.pairs:
            if pair.prompt_id not in self.prompts:
                raise DatasetFormatError(f'图像对 {pair.pair_id} 引用了不存在的提示词 {pair.prompt_id}')
            for image_id in (pair.y1, pair.y2):
                image = self.images.get(image_id)
                if image is None:
                    raise DatasetFormatError(f'图像对 {pair.pair_id} 引用了不存在的图像 {image_id}')
                if image.prompt_id != pair.prompt_id:
                    raise DatasetFormatError(f'图像对 {pair.pair_id} 的图像 {image_id} 不属于提示词 {pair.prompt_id}')

    def split(self, name: str) -> List[PreferencePair]:
        return [p for p in self.pairs if p.split == name]

    def prompt(self, prompt_id: str) -> Prompt:
        return self.prompts[prompt_id]

    def image(self, image_id: str) -> ImageRecord:
        return self.images[image_id]

    def images_for_prompt(self, prompt_id: str) -> List[ImageRecord]:
        return sorted((im for im in self.images.values() if im.prompt_id == prompt_id), key=lambda im: im.id)

    def pixels(self, image_id: str) -> np.ndarray:
        image = self.images[image_id]
        if image.pixels is None:
            raise DatasetFormatError(f'图像 {image_id} 的像素未加载')
        return image.pixels


# ─── JSONL ─────────────────────────────────────────────


def write_jsonl(path: PathLike, records: Iterable[Dict]):
    """每行一个 JSON 对象，原子写入"""
    lines = [json.dumps(r, ensure_ascii=False, sort_keys=True) for r in records]
    atomic_write_text(path, ''.join(line + '\n' for line in lines))


def read_jsonl(path: PathLike) -> List[Dict]:
    """读取 JSONL；空行跳过，格式错误时报告行号（从 1 开始）"""
    records = []
    with open(path, encoding='utf-8') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetFormatError(f'{path}: JSON 解析失败 ({e.msg})', line=line_no) from None
            if not isinstance(record, dict):
                raise DatasetFormatError(f'{path}: 每行必须是 JSON 对象', line=line_no)
            records.append(record)
    return records


# ─── 像素文件 ───────────────────────────────────────────


def write_pixels(path: PathLike, pixels: np.ndarray):
    """8 字节头（H, W 为 u32 小端）+ 小端 f32 的 H×W×C 数据"""
    pixels = np.asarray(pixels)
    if pixels.ndim != 3:
        raise DatasetFormatError(f'像素数组必须是 H×W×C: {pixels.shape}')
    h, w, _ = pixels.shape
    atomic_write_bytes(path, PIXEL_HEADER.pack(h, w) + pixels.astype('<f4').tobytes())


def read_pixels(path: PathLike) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < PIXEL_HEADER.size:
        raise DatasetFormatError(f'{path}: 像素文件过短')
    h, w = PIXEL_HEADER.unpack_from(data)
    body = len(data) - PIXEL_HEADER.size
    if h == 0 or w == 0 or body % (4 * h * w):
        raise DatasetFormatError(f'{path}: 像素数据长度 {body} 与 {h}×{w} 不一致')
    channels = body // (4 * h * w)
    pixels = np.frombuffer(data, dtype='<f4', offset=PIXEL_HEADER.size).reshape(h, w, channels)
    return pixels.astype(np.float32)


# ─── 保存 / 加载 ────────────────────────────────────────


def save_dataset(dataset: PreferenceDataset, out_dir: PathLike):
    """写入 prompts/images/pairs/annotations.jsonl 与 pixels/ 目录"""
    out_dir = Path(out_dir)
    for image in dataset.images.values():
        if image.pixels is not None:
            write_pixels(out_dir / image.pixels_path, image.pixels)
    write_jsonl(out_dir / 'prompts.jsonl', (p.to_dict() for p in dataset.prompts.values()))
    write_jsonl(out_dir / 'images.jsonl', (im.to_dict() for im in dataset.images.values()))
    write_jsonl(out_dir / 'pairs.jsonl', (p.to_dict() for p in dataset.pairs))
    write_jsonl(out_dir / 'annotations.jsonl', (a.to_dict() for a in dataset.annotations))
    logger.info(f'数据集已写入 {out_dir}: {len(dataset.prompts)} 条提示词, '
                f'{len(dataset.images)} 张图像, {len(dataset.pairs)} 个图像对')


def _build(records: List[Dict], factory, path: Path):
    items = []
    for line_no, record in enumerate(records, start=1):
        try:
            items.append(factory(record))
        except (KeyError, TypeError, ValueError, DatasetFormatError) as e:
            raise DatasetFormatError(f'{path}: 记录不完整或不合法 ({e})', line=line_no) from None
    return items


def load_dataset(data_dir: PathLike, load_pixels: bool = True) -> PreferenceDataset:
    data_dir = Path(data_dir)
    if not (data_dir / 'pairs.jsonl').exists():
        raise DatasetFormatError(f'{data_dir} 中没有 pairs.jsonl')

    prompts = _build(read_jsonl(data_dir / 'prompts.jsonl'),
                     lambda r: Prompt(r['id'], r['text'], r['category']), data_dir / 'prompts.jsonl')
    images = _build(read_jsonl(data_dir / 'images.jsonl'),
                    lambda r: ImageRecord(r['id'], r['prompt_id'], r['pixels_path'], int(r['seed']),
                                          r.get('teacher_q'), r.get('generator')),
                    data_dir / 'images.jsonl')
    pairs = _build(read_jsonl(data_dir / 'pairs.jsonl'), PreferencePair.from_dict, data_dir / 'pairs.jsonl')
    annotations = []
    if (data_dir / 'annotations.jsonl').exists():
        annotations = _build(read_jsonl(data_dir / 'annotations.jsonl'), AnnotationTriple.from_dict,
                             data_dir / 'annotations.jsonl')

    if load_pixels:
        for image in images:
            image.pixels = read_pixels(data_dir / image.pixels_path)

    dataset = PreferenceDataset({p.id: p for p in prompts}, {im.id: im for im in images}, pairs, annotations)
    dataset.validate()
    logger.info(f'已加载数据集 {data_dir}: {len(prompts)} 条提示词, {len(pairs)} 个图像对')
    return dataset


# ─── 划分 ──────────────────────────────────────────────


def split_dataset(pairs: Sequence[PreferencePair], fractions: Sequence[float],
                  seed: int) -> List[PreferencePair]:
    """
    按提示词划分 train/val/test，同一提示词的图像对总在同一划分

    提示词 id 排序后用 seed 打乱，再按累计图像对数量贪心切分，
    每个划分的数量与目标相差不超过一个提示词组。
    """
    fractions = [float(f) for f in fractions]
    if len(fractions) != len(SPLITS):
        raise SplitError(f'需要 {len(SPLITS)} 个划分比例: {fractions}')
    if any(f < 0 or math.isnan(f) for f in fractions):
        raise SplitError(f'划分比例不能为负: {fractions}')
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f'划分比例之和必须为 1，实际 {sum(fractions)}')

    groups = defaultdict(list)
    for pair in pairs:
        groups[pair.prompt_id].append(pair)
    prompt_ids = sorted(groups)
    rng = np.random.default_rng(seed)
    order = [prompt_ids[i] for i in rng.permutation(len(prompt_ids))]

    total = len(pairs)
    boundaries = np.cumsum(fractions) * total
    assignment = {}
    cumulative = 0
    current = 0
    for prompt_id in order:
        size = len(groups[prompt_id])
        # 组中点越过当前边界时进入下一划分
        while current < len(SPLITS) - 1 and cumulative + size / 2 > boundaries[current]:
            current += 1
        assignment[prompt_id] = SPLITS[current]
        cumulative += size

    result = [replace(p, split=assignment[p.prompt_id]) for p in pairs]
    counts = {s: sum(1 for p in result if p.split == s) for s in SPLITS}
    logger.debug(f'数据集划分: {counts}')
    return result
