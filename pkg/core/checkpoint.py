"""
检查点读写

文件布局:
    b'MPSCKPT1' | u32 小端头长度 | UTF-8 JSON 头 | 小端 f32 参数负载

JSON 头包含 version、model_config、train_config、vocabulary、manifest、step、rng_state。
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from config import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from utils.file_utils import PathLike, atomic_write_bytes

from .errors import CheckpointError, ConfigError
from .model import ModelConfig, MPSModel
from .tokenizer import Vocabulary

logger = logging.getLogger(__name__)

HEADER_LENGTH = struct.Struct('<I')


@dataclass
class Checkpoint:
    version: int
    model_config: Dict
    vocabulary: List[str]
    manifest: List[Dict]
    payload: np.ndarray = field(repr=False)
    train_config: Optional[Dict] = None
    step: int = 0
    rng_state: Optional[Dict] = None

    def header(self) -> Dict:
        return {
            'version': self.version,
            'model_config': self.model_config,
            'train_config': self.train_config,
            'vocabulary': self.vocabulary,
            'manifest': self.manifest,
            'step': self.step,
            'rng_state': self.rng_state,
        }


def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    header = json.dumps(checkpoint.header(), sort_keys=True, ensure_ascii=False).encode('utf-8')
    payload = np.asarray(checkpoint.payload, dtype='<f4').tobytes()
    return CHECKPOINT_MAGIC + HEADER_LENGTH.pack(len(header)) + header + payload


def save_checkpoint(model: MPSModel, path: PathLike, train_config: Dict = None, step: int = 0,
                    rng_state: Dict = None) -> Checkpoint:
    """
    原子写入检查点，返回写入的内容

    负载固定为 f32，只接受 float32 模型；float64 模型保存后无法逐位还原。
    """
    if model.params.dtype != np.float32:
        raise CheckpointError(f'检查点只保存 float32 模型，当前精度为 {model.params.dtype}')
    checkpoint = Checkpoint(
        version=CHECKPOINT_VERSION,
        model_config=model.config.to_dict(),
        vocabulary=list(model.vocabulary.tokens),
        manifest=model.params.manifest(),
        payload=model.params.flatten(),
        train_config=train_config,
        step=step,
        rng_state=rng_state,
    )
    atomic_write_bytes(path, encode_checkpoint(checkpoint))
    logger.debug(f'检查点已写入 {path}（step {step}）')
    return checkpoint


def read_checkpoint(path: PathLike) -> Checkpoint:
    """解析并校验检查点文件（不构建模型）"""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f'无法读取检查点 {path}: {e}') from e
    magic_len = len(CHECKPOINT_MAGIC)
    if data[:magic_len] != CHECKPOINT_MAGIC:
        raise CheckpointError(f'{path} 不是检查点文件（魔数不符）')
    if len(data) < magic_len + HEADER_LENGTH.size:
        raise CheckpointError(f'{path}: 文件被截断（缺少头长度）')
    (header_len,) = HEADER_LENGTH.unpack_from(data, magic_len)
    start = magic_len + HEADER_LENGTH.size
    if len(data) < start + header_len:
        raise CheckpointError(f'{path}: 文件被截断（JSON 头不完整）')
    try:
        header = json.loads(data[start:start + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f'{path}: JSON 头无法解析 ({e})') from None

    if header.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f'{path}: 不支持的检查点版本 {header.get("version")}（期望 {CHECKPOINT_VERSION}）')
    for key in ('model_config', 'vocabulary', 'manifest'):
        if key not in header:
            raise CheckpointError(f'{path}: JSON 头缺少 {key}')

    manifest = header['manifest']
    expected = 0
    for entry in manifest:
        if entry['offset'] != expected:
            raise CheckpointError(f'{path}: 参数 {entry["name"]} 的偏移 {entry["offset"]} 与预期 {expected} 不符')
        expected += int(np.prod(entry['shape']))
    body = data[start + header_len:]
    if len(body) != 4 * expected:
        raise CheckpointError(f'{path}: 负载长度 {len(body)} 字节与清单所需 {4 * expected} 字节不一致')

    return Checkpoint(
        version=header['version'],
        model_config=header['model_config'],
        vocabulary=header['vocabulary'],
        manifest=manifest,
        payload=np.frombuffer(body, dtype='<f4').astype(np.float32),
        train_config=header.get('train_config'),
        step=int(header.get('step', 0)),
        rng_state=header.get('rng_state'),
    )


def load_checkpoint(path: PathLike, model: MPSModel = None) -> MPSModel:
    """
    从检查点恢复模型

    给定 model 时校验参数清单并把参数载入该模型；形状不符时指出第一个不一致的参数。
    """
    checkpoint = read_checkpoint(path)
    if model is None:
        try:
            config = ModelConfig.from_dict(checkpoint.model_config)
        except (ConfigError, TypeError) as e:
            raise CheckpointError(f'{path}: 模型配置无效 ({e})') from None
        model = MPSModel(config, Vocabulary(tuple(checkpoint.vocabulary)))
    model.params.load_flat(checkpoint.payload, checkpoint.manifest)
    logger.info(f'已加载检查点 {path}（step {checkpoint.step}，{model.params.size} 个参数）')
    return model
