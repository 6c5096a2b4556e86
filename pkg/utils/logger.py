"""
日志模块 - stderr 上的 JSON 行日志与训练日志
"""

import json
import logging
import sys
from typing import Any, Dict, List, Optional

from .file_utils import PathLike, atomic_write_text

log = logging.getLogger(__name__)


class JsonLineFormatter(logging.Formatter):
    """每条日志一个 JSON 对象；通过 extra={'fields': {...}} 附加结构化字段"""

    def format(self, record: logging.LogRecord) -> str:
        data = {
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
        }
        fields = getattr(record, 'fields', None)
        if isinstance(fields, dict):
            data.update(fields)
        if record.exc_info:
            data['exception'] = self.formatException(record.exc_info)
        return json.dumps(data, ensure_ascii=False, default=str)


def setup_logging(level: str = 'INFO', stream=None) -> logging.Handler:
    """把根日志器的输出替换为 stderr 上的 JSON 行"""
    handler = logging.StreamHandler(stream or sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    for existing in list(root.handlers):
        if isinstance(existing.formatter, JsonLineFormatter):
            root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level.upper() if isinstance(level, str) else level)
    return handler


class TrainingLog:
    """
    训练日志：每行一个 JSON 对象（step、lr、loss，验证步另有 val_accuracy）

    记录保存在内存中，flush 时整体原子写入，文件内容只依赖训练过程本身。
    """

    def __init__(self, path: Optional[PathLike] = None):
        self.path = path
        self.records: List[Dict[str, Any]] = []

    def log_step(self, step: int, lr: float, loss: float, val_accuracy: Dict[str, float] = None):
        record = {'step': step, 'lr': lr, 'loss': loss}
        if val_accuracy is not None:
            record['val_accuracy'] = val_accuracy
        self.records.append(record)
        log.debug(f'step {step}: loss={loss:.6f} lr={lr:.3g}', extra={'fields': record})

    @property
    def losses(self) -> List[float]:
        return [r['loss'] for r in self.records]

    def flush(self):
        if self.path is None:
            return
        atomic_write_text(self.path, ''.join(json.dumps(r, sort_keys=True) + '\n' for r in self.records))
