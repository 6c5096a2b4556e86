"""
运行配置

默认值 (config.Config) < TOML 文件 < MPS_ 前缀环境变量 < 命令行参数。
TOML 的 [model]/[train]/[data]/[eval]/[paths] 小节展开成 MODEL_*/TRAIN_*/... 键，
再用 get_namespace 还原成各模块的配置 dataclass。
"""

import hashlib
import json
import logging
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Dict, Mapping, Optional

from flask import Config as FlaskConfig

from config import Config

from .errors import ConfigError
from .evaluator import EvalConfig
from .model import ModelConfig
from .synthetic import GeneratorConfig
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

SECTIONS = ('model', 'train', 'data', 'eval', 'paths')
TOP_LEVEL_KEYS = ('seed', 'threads')
PATH_KEYS = ('data', 'out', 'checkpoint', 'report')


def load_toml(f: IO[bytes]) -> Dict[str, Any]:
    """把 TOML 展开成 flask.Config 接受的大写扁平键"""
    try:
        data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f'配置文件无法解析: {e}') from None
    flat = {}
    for key, value in data.items():
        if isinstance(value, dict):
            if key not in SECTIONS:
                raise ConfigError(f'未知的配置小节: [{key}]')
            for sub_key, sub_value in value.items():
                flat[f'{key.upper()}_{sub_key.upper()}'] = sub_value
        elif key in TOP_LEVEL_KEYS:
            flat[key.upper()] = value
        else:
            raise ConfigError(f'未知的配置项: {key}')
    return flat


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    data: GeneratorConfig
    eval: EvalConfig
    seed: int = 0
    threads: int = 1
    paths: Dict[str, Optional[str]] = field(default_factory=dict)

    def path(self, name: str, override: Optional[str] = None) -> Optional[Path]:
        value = override if override is not None else self.paths.get(name)
        return Path(value) if value is not None else None

    def to_dict(self) -> Dict:
        return {
            'seed': self.seed,
            'threads': self.threads,
            'model': self.model.to_dict(),
            'train': self.train.to_dict(),
            'data': self.data.to_dict(),
            'eval': {'split': self.eval.split, 'tie_policy': self.eval.tie_policy,
                     'batch_size': self.eval.batch_size},
        }

    def fingerprint(self) -> str:
        """不含路径与线程数：它们不影响结果"""
        data = self.to_dict()
        data.pop('threads')
        text = json.dumps(data, sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(text.encode('utf-8')).hexdigest()[:16]


def _namespace(config: FlaskConfig, prefix: str) -> Dict[str, Any]:
    return config.get_namespace(f'{prefix.upper()}_', lowercase=True)


def _seeded(section: str, values: Dict[str, Any], seed: int) -> Dict[str, Any]:
    if 'seed' in values:
        raise ConfigError(f'{section}.seed 不可单独设置，请使用顶层 seed')
    return {**values, 'seed': seed}


def build_run_config(config: Mapping[str, Any]) -> RunConfig:
    flask_config = config if isinstance(config, FlaskConfig) else FlaskConfig('.', config)
    seed = flask_config.get('SEED', 0)
    threads = flask_config.get('THREADS', 1)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f'seed 必须是非负整数: {seed!r}')
    if isinstance(threads, bool) or not isinstance(threads, int) or threads < 1:
        raise ConfigError(f'threads 必须 ≥ 1: {threads!r}')

    model = ModelConfig.from_dict(_namespace(flask_config, 'model'))
    train = TrainConfig.from_dict(_seeded('train', _namespace(flask_config, 'train'), seed))
    data_values = _seeded('data', _namespace(flask_config, 'data'), seed)
    for key in ('image_size', 'channels'):
        if key in data_values and data_values[key] != getattr(model, key):
            raise ConfigError(f'data.{key} 必须与 model.{key} 一致')
        data_values[key] = getattr(model, key)
    data = GeneratorConfig.from_dict(data_values)

    eval_values = _namespace(flask_config, 'eval')
    unknown = sorted(set(eval_values) - {'split', 'tie_policy', 'batch_size'})
    if unknown:
        raise ConfigError(f'未知的评估配置项: {unknown[0]}')
    try:
        evaluation = EvalConfig(**eval_values)
    except ValueError as e:
        raise ConfigError(str(e)) from None

    paths = _namespace(flask_config, 'paths')
    unknown = sorted(set(paths) - set(PATH_KEYS))
    if unknown:
        raise ConfigError(f'未知的路径配置项: {unknown[0]}')
    return RunConfig(model, train, data, evaluation, seed, threads, paths)


def load_run_config(path: Optional[str] = None, overrides: Mapping[str, Any] = None,
                    environ: bool = True) -> RunConfig:
    """
    按优先级合并配置并构造 RunConfig

    Args:
        path: TOML 配置文件，可为空
        overrides: 命令行参数（大写键，值为 None 的项忽略）
        environ: 是否读取 MPS_ 前缀环境变量，例如 MPS_SEED=7、MPS_TRAIN_STEPS=100
    """
    config = FlaskConfig('.')
    config.from_object(Config)
    if path is not None:
        config.from_file(str(path), load=load_toml, text=False)
    if environ:
        config.from_prefixed_env('MPS')
    if overrides:
        config.update({k: v for k, v in overrides.items() if v is not None})
    run_config = build_run_config(config)
    logger.debug(f'运行配置: {run_config.to_dict()}',
                 extra={'fields': {'config_fingerprint': run_config.fingerprint()}})
    return run_config
