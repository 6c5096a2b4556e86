"""
文件工具函数
"""

import os
import tempfile
from pathlib import Path
from typing import Union

PathLike = Union[str, os.PathLike]


def atomic_write_bytes(path: PathLike, data: bytes):
    """先写同目录临时文件，再 os.replace 到目标路径"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f'.{path.name}.', suffix='.tmp', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: PathLike, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


def format_count(count: int) -> str:
    """格式化数量显示"""
    if count < 1000:
        return str(count)
    elif count < 1000000:
        return f"{count / 1000:.1f}K"
    else:
        return f"{count / 1000000:.1f}M"


def format_percent(value: float) -> str:
    """准确率等百分数显示（输入已是 0-100）"""
    if value is None:
        return '-'
    return f"{value:.2f}%"
