"""
分词与词表

词元是小写文本中的 [a-z0-9]+ 连续片段。词表 id 从 0 连续编号：
先是 4 个保留符号，再是全部偏好条件词，最后是语料词按 (−频次, 词) 排序。
"""

import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

from config import BOS_TOKEN, CONDITION_WORDS, EOS_TOKEN, PAD_TOKEN, RESERVED_TOKENS, UNK_TOKEN
from utils.file_utils import PathLike, atomic_write_text

from .errors import TokenizationError, VocabularyError

logger = logging.getLogger(__name__)

TOKEN_PATTERN = re.compile(r'[a-z0-9]+')
DEFAULT_MAX_LENGTH = 32
DEFAULT_VOCAB_SIZE = 2048


def split_words(text: str) -> List[str]:
    """按空白与标点切分并转小写"""
    return TOKEN_PATTERN.findall(text.lower())


def forced_words() -> List[str]:
    """必须进入词表的条件词（综合条件即三组词的去重并集）"""
    return list(CONDITION_WORDS['overall'])


@dataclass(frozen=True)
class Vocabulary:
    """词 → id 映射，行号即 id"""
    tokens: tuple
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, 'tokens', tokens)
        if tokens[:len(RESERVED_TOKENS)] != RESERVED_TOKENS:
            raise VocabularyError(f'词表开头必须是保留符号 {RESERVED_TOKENS}')
        index = {}
        for i, token in enumerate(tokens):
            if token in index:
                raise VocabularyError(f'词表中存在重复词: {token}')
            index[token] = i
        object.__setattr__(self, '_index', index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id_of(self, token: str) -> int:
        """未登录词返回 UNK"""
        return self._index.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise VocabularyError(f'id 超出词表范围: {token_id}')
        return self.tokens[token_id]

    @property
    def bos_id(self) -> int:
        return self._index[BOS_TOKEN]

    @property
    def eos_id(self) -> int:
        return self._index[EOS_TOKEN]

    @property
    def pad_id(self) -> int:
        return self._index[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._index[UNK_TOKEN]


@dataclass(frozen=True)
class TokenSequence:
    """BOS + 词 id + EOS"""
    ids: tuple
    bos_id: int = 0
    eos_id: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'ids', tuple(int(i) for i in self.ids))
        if len(self.ids) < 2:
            raise TokenizationError(f'词元序列长度至少为 2: {self.ids}')
        if self.ids[0] != self.bos_id or self.ids[-1] != self.eos_id:
            raise TokenizationError('词元序列必须以 BOS 开始、以 EOS 结束')

    def __len__(self) -> int:
        return len(self.ids)


def build_vocabulary(corpus: Iterable[str], max_size: int = DEFAULT_VOCAB_SIZE) -> Vocabulary:
    """
    由语料构建词表

    保留符号与条件词总是收录；其余位置按频次从高到低填充，
    频次相同时按字典序，总数不超过 max_size。
    """
    corpus = list(corpus)
    if not corpus:
        raise VocabularyError('语料为空，无法构建词表')
    fixed = list(RESERVED_TOKENS) + [w for w in dict.fromkeys(forced_words())]
    if max_size < len(fixed):
        raise VocabularyError(f'词表上限 {max_size} 小于保留词与条件词总数 {len(fixed)}')

    counts = Counter()
    for text in corpus:
        counts.update(split_words(text))
    present = set(fixed)
    ranked = sorted((t for t in counts if t not in present), key=lambda t: (-counts[t], t))
    tokens = fixed + ranked[:max_size - len(fixed)]
    logger.debug(f'构建词表: 语料 {len(corpus)} 条，不同词 {len(counts)} 个，收录 {len(tokens)} 个')
    return Vocabulary(tuple(tokens))


def tokenize(text: str, vocab: Vocabulary, max_length: int = DEFAULT_MAX_LENGTH) -> TokenSequence:
    """BOS + 词 id（未登录词为 UNK）+ EOS，超长时截断并保留 EOS"""
    if not text or not text.strip():
        raise TokenizationError('文本为空')
    if max_length < 2:
        raise TokenizationError(f'max_length 至少为 2: {max_length}')
    words = split_words(text)[:max_length - 2]
    ids = [vocab.bos_id] + [vocab.id_of(w) for w in words] + [vocab.eos_id]
    return TokenSequence(tuple(ids), vocab.bos_id, vocab.eos_id)


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    """去掉保留符号后以空格连接"""
    reserved = {vocab.bos_id, vocab.eos_id, vocab.pad_id}
    return ' '.join(vocab.token_of(int(i)) for i in ids if int(i) not in reserved)


def save_vocabulary(vocab: Vocabulary, path: PathLike):
    """每行一个词，行号即 id"""
    atomic_write_text(path, '\n'.join(vocab.tokens) + '\n')


def load_vocabulary(path: PathLike) -> Vocabulary:
    with open(path, encoding='utf-8') as f:
        tokens = [line.rstrip('\n') for line in f]
    while tokens and tokens[-1] == '':
        tokens.pop()
    return Vocabulary(tuple(tokens))
