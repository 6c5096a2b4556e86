"""
文本 / 图像 / 条件编码器

文本编码器 E_t 采用因果自注意力，批内补齐到相同长度时真实词元的输出不受 PAD 影响；
条件编码器 E_c 与 E_t 共享参数。图像编码器 E_v 把图像切成 p×p 块线性投影，
并在最前面加一个可学习的 CLS 行。
"""

import logging
from typing import List, Sequence, Tuple

import numpy as np

from . import tensor as T
from .conditions import ConditionSpec
from .errors import ShapeError, VocabularyError
from .layers import LayerNorm, Linear, TransformerBlock, causal_mask
from .params import ModelParams
from .tensor import Tensor
from .tokenizer import TokenSequence, Vocabulary, tokenize

logger = logging.getLogger(__name__)


class TextEncoder:
    """词嵌入 + 位置嵌入 + L 个 Transformer 块 + LayerNorm"""

    def __init__(self, params: ModelParams, vocab_size: int, width: int, depth: int, heads: int,
                 max_length: int, rng: np.random.Generator, name: str = 'text'):
        self.vocab_size = vocab_size
        self.max_length = max_length
        self.width = width
        self.token_embedding = params.add(f'{name}.token_embedding', (vocab_size, width), rng, fan_in=width)
        self.position_embedding = params.add(f'{name}.position_embedding', (max_length, width), rng, fan_in=width)
        self.blocks = [TransformerBlock(params, f'{name}.block{i}', width, heads, rng) for i in range(depth)]
        self.norm = LayerNorm(params, f'{name}.norm', width)

    def __call__(self, ids: np.ndarray) -> Tensor:
        """ids: (..., n) 整数数组 -> (..., n, width)"""
        ids = np.asarray(ids, dtype=np.int64)
        n = ids.shape[-1]
        if n > self.max_length:
            raise ShapeError(f'序列长度 {n} 超过上限 {self.max_length}')
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise VocabularyError(f'词 id 超出词表范围 [0, {self.vocab_size}): {ids.min()}..{ids.max()}')
        x = T.take(self.token_embedding, ids) + T.take(self.position_embedding, slice(0, n))
        mask = causal_mask(n)
        for block in self.blocks:
            x = block(x, mask)
        return self.norm(x)


class ImageEncoder:
    """图像块投影 + CLS + 位置嵌入 + L 个 Transformer 块 + LayerNorm"""

    def __init__(self, params: ModelParams, image_size: int, channels: int, patch_size: int,
                 width: int, depth: int, heads: int, rng: np.random.Generator, name: str = 'image'):
        if image_size % patch_size:
            raise ShapeError(f'图像尺寸 {image_size} 不能被图像块大小 {patch_size} 整除')
        self.image_size = image_size
        self.channels = channels
        self.patch_size = patch_size
        self.grid = image_size // patch_size
        self.patch_proj = Linear(params, f'{name}.patch_proj', patch_size * patch_size * channels, width, rng)
        self.cls = params.add(f'{name}.cls', (1, width), rng, fan_in=width)
        self.position_embedding = params.add(f'{name}.position_embedding', (self.grid ** 2 + 1, width),
                                             rng, fan_in=width)
        self.blocks = [TransformerBlock(params, f'{name}.block{i}', width, heads, rng) for i in range(depth)]
        self.norm = LayerNorm(params, f'{name}.norm', width)

    @property
    def n_rows(self) -> int:
        """图像块数 + 1（CLS）"""
        return self.grid ** 2 + 1

    def patchify(self, pixels: np.ndarray) -> np.ndarray:
        """(B, H, W, C) -> (B, n_patches, p·p·C)，按行优先遍历图像块"""
        if pixels.ndim != 4:
            raise ShapeError(f'图像批次必须是 (B, H, W, C)，实际 {pixels.shape}')
        b, h, w, c = pixels.shape
        p = self.patch_size
        if h % p or w % p:
            raise ShapeError(f'图像尺寸 {h}×{w} 不能被图像块大小 {p} 整除')
        if (h, w, c) != (self.image_size, self.image_size, self.channels):
            raise ShapeError(
                f'图像尺寸 {h}×{w}×{c} 与模型配置 {self.image_size}×{self.image_size}×{self.channels} 不一致'
            )
        patches = pixels.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
        return patches.reshape(b, (h // p) * (w // p), p * p * c)

    def __call__(self, pixels: np.ndarray) -> Tensor:
        """pixels: (B, H, W, C) -> (B, n_patches + 1, width)"""
        patches = Tensor(self.patchify(np.asarray(pixels)), dtype=self.cls.dtype)
        x = self.patch_proj(patches)
        cls = T.broadcast_to(self.cls, (x.shape[0], 1, x.shape[-1]))
        x = T.concat([cls, x], axis=-2) + self.position_embedding
        for block in self.blocks:
            x = block(x)
        return self.norm(x)


def pad_sequences(sequences: Sequence[TokenSequence], pad_id: int) -> Tuple[np.ndarray, np.ndarray]:
    """补齐到批内最大长度，返回 (ids, 真实长度)"""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    ids = np.full((len(sequences), int(lengths.max())), pad_id, dtype=np.int64)
    for i, seq in enumerate(sequences):
        ids[i, :len(seq)] = seq.ids
    return ids, lengths


def encode_text(tokens: TokenSequence, encoder: TextEncoder) -> Tensor:
    """X_t = E_t(x)，形状 (n_p, n_d)"""
    return T.take(encoder(np.asarray(tokens.ids)[None, :]), 0)


def encode_texts(texts: Sequence[str], vocab: Vocabulary, encoder: TextEncoder) -> Tuple[Tensor, np.ndarray]:
    """批量编码，返回 ((B, n_max, n_d), 各条真实长度)"""
    sequences = [tokenize(text, vocab, encoder.max_length) for text in texts]
    ids, lengths = pad_sequences(sequences, vocab.pad_id)
    return encoder(ids), lengths


def encode_image(pixels: np.ndarray, encoder: ImageEncoder) -> Tensor:
    """X_v = E_v(y)，形状 (n_v, n_d)，第 0 行为 CLS"""
    return T.take(encoder(np.asarray(pixels)[None]), 0)


def encode_images(pixels: np.ndarray, encoder: ImageEncoder) -> Tensor:
    """批量编码 (B, H, W, C) 像素，返回 (B, n_v, n_d)"""
    return encoder(np.asarray(pixels))


def encode_condition(spec: ConditionSpec, vocab: Vocabulary, encoder: TextEncoder) -> Tensor:
    """X_c = E_c(c)：属性词以空格连接后经文本编码器，形状 (n_c, n_d)"""
    return encode_text(tokenize(spec.text, vocab, encoder.max_length), encoder)


def condition_token_count(spec: ConditionSpec, vocab: Vocabulary, max_length: int) -> int:
    return len(tokenize(spec.text, vocab, max_length))


def token_strings(text: str, vocab: Vocabulary, max_length: int) -> List[str]:
    return [vocab.token_of(i) for i in tokenize(text, vocab, max_length).ids]
