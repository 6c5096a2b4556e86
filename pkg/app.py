"""
多维偏好评分 (MPS) - 命令行入口

退出码: 0 成功（含 --help）；1 用法错误；2 运行时错误。
"""

import json
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

import click

from config import DIMENSIONS
from core.analyzer import PromptAnalyzer
from core.base_scorer import PreferenceScorer
from core.checkpoint import load_checkpoint, read_checkpoint
from core.conditions import parse_dimensions
from core.dataset import SPLITS, load_dataset, read_pixels, save_dataset
from core.errors import MPSError
from core.evaluator import TIE_POLICIES, EvalReport, benchmark_generators, export_attention, per_dimension_report
from core.model import mps_score
from core.ranker import rank_images
from core.run_config import RunConfig, load_run_config
from core.scorers import PerDimensionScorer, PlantedTeacherScorer
from core.synthetic import generate_synthetic_dataset
from core.trainer import train, train_separately
from utils.file_utils import atomic_write_text
from utils.logger import setup_logging
from utils.report import generate_html_comparison, render_benchmark, render_comparison, render_report_table

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


def common_options(func):
    """每个子命令都接受 --config / --seed / --threads"""
    func = click.option('--threads', type=click.IntRange(min=1), default=None,
                        help='批量打分的工作线程数，用于 eval、benchmark 与 train 的验证打分，其余子命令忽略；默认 1，结果与线程数无关')(func)
    func = click.option('--seed', type=click.IntRange(min=0), default=None,
                        help='随机种子，覆盖配置文件与 MPS_SEED')(func)
    func = click.option('--config', 'config_path', type=click.Path(exists=True, dir_okay=False), default=None,
                        help='TOML 配置文件')(func)
    return func


def _run_config(config_path: Optional[str], seed: Optional[int], threads: Optional[int],
                **overrides) -> RunConfig:
    return load_run_config(config_path, {'SEED': seed, 'THREADS': threads, **overrides})


def _require(run: RunConfig, name: str, value: Optional[str], flag: str) -> Path:
    path = run.path(name, value)
    if path is None:
        raise click.UsageError(f'缺少 {flag}（或配置 [paths] {name}）')
    return path


def _dimensions_option(value: Optional[str]):
    if value is None:
        return None
    return [d.value for d in parse_dimensions(v.strip() for v in value.split(','))]


def _write_json(path: Path, data: Dict):
    atomic_write_text(path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + '\n')


def _load_scorer(checkpoint: Optional[str], teacher: bool, separate_dir: Optional[str]) -> PreferenceScorer:
    chosen = [x for x in (checkpoint, separate_dir) if x] + (['teacher'] if teacher else [])
    if len(chosen) != 1:
        raise click.UsageError('--ckpt、--teacher、--separate-dir 必须且只能指定一个')
    if teacher:
        return PlantedTeacherScorer()
    if separate_dir:
        models = {}
        for dim in DIMENSIONS:
            path = Path(separate_dir) / dim / 'best'
            if path.exists():
                models[dim] = load_checkpoint(path)
        return PerDimensionScorer(models)
    return load_checkpoint(checkpoint)


@click.group(context_settings={'help_option_names': ['-h', '--help']})
@click.option('--log-level', default='INFO', show_default=True,
              type=click.Choice(['DEBUG', 'INFO', 'WARNING', 'ERROR'], case_sensitive=False),
              help='stderr 日志级别（JSON 行）')
def cli(log_level: str):
    """多维偏好评分：数据生成、训练、评估、打分与重排序"""
    setup_logging(log_level)


@cli.command('gen-data')
@common_options
@click.option('--out', default=None, help='数据集输出目录')
@click.option('--noise-rate', type=float, default=None, help='标注者翻转概率 ρ')
@click.option('--prompts-per-category', type=int, default=None, help='每个类别的提示词数')
def gen_data(config_path, seed, threads, out, noise_rate, prompts_per_category):
    """生成带植入教师的合成偏好数据集"""
    run = _run_config(config_path, seed, threads, DATA_NOISE_RATE=noise_rate,
                      DATA_PROMPTS_PER_CATEGORY=prompts_per_category)
    out_dir = _require(run, 'out', out, '--out')
    dataset = generate_synthetic_dataset(run.data)
    save_dataset(dataset, out_dir)
    click.echo(json.dumps(PromptAnalyzer(dataset).get_statistics(), ensure_ascii=False, indent=2))


@cli.command('train')
@common_options
@click.option('--data', default=None, help='数据集目录')
@click.option('--out', default=None, help='检查点输出目录')
@click.option('--steps', type=int, default=None, help='训练步数')
@click.option('--dimensions', default=None, help='逗号分隔的训练维度，默认全部四个')
@click.option('--separate', is_flag=True, help='每个维度单独训练一个模型，写入 OUT/<维度>/')
def train_command(config_path, seed, threads, data, out, steps, dimensions, separate):
    """训练 MPS 模型"""
    run = _run_config(config_path, seed, threads, TRAIN_STEPS=steps, TRAIN_DIMENSIONS=_dimensions_option(dimensions))
    dataset = load_dataset(_require(run, 'data', data, '--data'))
    out_dir = _require(run, 'out', out, '--out')
    if separate:
        results = train_separately(run.model, run.train, dataset, out_dir, threads=run.threads)
        summary = {dim: {'final': str(r.final_path), 'best': str(r.best_path), 'best_val_accuracy': r.best_accuracy}
                   for dim, r in results.items()}
    else:
        result = train(run.model, run.train, dataset, out_dir, threads=run.threads)
        summary = {'final': str(result.final_path), 'best': str(result.best_path),
                   'best_val_accuracy': result.best_accuracy}
    click.echo(json.dumps(summary, ensure_ascii=False, indent=2))


@cli.command('eval')
@common_options
@click.option('--ckpt', default=None, help='检查点文件')
@click.option('--teacher', is_flag=True, help='用植入教师代替模型（上界）')
@click.option('--separate-dir', default=None, help='train --separate 的输出目录')
@click.option('--data', default=None, help='数据集目录')
@click.option('--report', default=None, help='EvalReport JSON 输出路径')
@click.option('--split', type=click.Choice(SPLITS), default=None, help='评估的划分（默认 test）')
@click.option('--tie-policy', type=click.Choice(TIE_POLICIES), default=None, help='平局处理方式')
def eval_command(config_path, seed, threads, ckpt, teacher, separate_dir, data, report, split, tie_policy):
    """分维度评估偏好准确率与 Pearson R"""
    run = _run_config(config_path, seed, threads, EVAL_SPLIT=split, EVAL_TIE_POLICY=tie_policy,
                      PATHS_CHECKPOINT=ckpt)
    checkpoint = None if (teacher or separate_dir) else run.paths.get('checkpoint')
    scorer = _load_scorer(checkpoint, teacher, separate_dir)
    dataset = load_dataset(_require(run, 'data', data, '--data'))
    dimensions = DIMENSIONS
    if isinstance(scorer, PerDimensionScorer):
        dimensions = [d for d in DIMENSIONS if d in scorer.scorers]
    result = per_dimension_report(scorer, dataset, run.eval.split, dimensions, tie_policy=run.eval.tie_policy,
                                  threads=run.threads, chunk_size=run.eval.batch_size,
                                  config_fingerprint=run.fingerprint())
    report_path = run.path('report', report)
    if report_path is not None:
        result.save(report_path)
    click.echo(render_report_table(result), nl=False)


@cli.command('score')
@common_options
@click.option('--ckpt', required=True, help='检查点文件')
@click.option('--prompt', required=True, help='提示词文本')
@click.option('--image', required=True, type=click.Path(exists=True, dir_okay=False), help='像素文件 (.bin)')
@click.option('--condition', default='overall', show_default=True, help='偏好维度')
def score_command(config_path, seed, threads, ckpt, prompt, image, condition):
    """计算单个 (提示词, 图像, 条件) 的 MPS 得分"""
    _run_config(config_path, seed, threads)
    model = load_checkpoint(ckpt)
    score = mps_score(prompt, read_pixels(image), condition, model)
    click.echo(json.dumps({'condition': condition, 'score': score}))


@cli.command('rank')
@common_options
@click.option('--ckpt', default=None, help='检查点文件')
@click.option('--teacher', is_flag=True, help='用植入教师排序')
@click.option('--data', default=None, help='数据集目录')
@click.option('--prompt-id', required=True, help='提示词 id')
@click.option('--condition', default='overall', show_default=True, help='偏好维度')
@click.option('--out', default=None, help='排序结果 JSON 输出路径')
def rank_command(config_path, seed, threads, ckpt, teacher, data, prompt_id, condition, out):
    """按得分对一条提示词的全部候选图像重排序"""
    run = _run_config(config_path, seed, threads, PATHS_CHECKPOINT=ckpt)
    scorer = _load_scorer(None if teacher else run.paths.get('checkpoint'), teacher, None)
    dataset = load_dataset(_require(run, 'data', data, '--data'))
    if prompt_id not in dataset.prompts:
        raise click.BadParameter(f'数据集中没有提示词 {prompt_id}', param_hint='--prompt-id')
    prompt = dataset.prompt(prompt_id)
    result = rank_images(scorer, prompt, dataset.images_for_prompt(prompt_id), condition)
    if out is not None:
        _write_json(Path(out), result.to_dict())
    click.echo(json.dumps(result.to_dict(), ensure_ascii=False))


@cli.command('export-attn')
@common_options
@click.option('--ckpt', required=True, help='检查点文件')
@click.option('--data', default=None, help='数据集目录')
@click.option('--image-id', required=True, help='图像 id（提示词取其所属提示词）')
@click.option('--condition', default='overall', show_default=True, help='偏好维度')
@click.option('--out', required=True, help='注意力 JSON 输出路径')
def export_attn_command(config_path, seed, threads, ckpt, data, image_id, condition, out):
    """导出条件掩码与交叉注意力"""
    run = _run_config(config_path, seed, threads)
    model = load_checkpoint(ckpt)
    dataset = load_dataset(_require(run, 'data', data, '--data'))
    if image_id not in dataset.images:
        raise click.BadParameter(f'数据集中没有图像 {image_id}', param_hint='--image-id')
    image = dataset.image(image_id)
    record = export_attention(model, dataset.prompt(image.prompt_id).text, dataset.pixels(image_id),
                              condition, out)
    click.echo(json.dumps({'score': record['score'], 'kept_tokens': sum(record['keep']),
                           'tokens': len(record['tokens'])}, ensure_ascii=False))


@cli.command('inspect')
@common_options
@click.option('--ckpt', required=True, help='检查点文件')
def inspect_command(config_path, seed, threads, ckpt):
    """打印检查点的参数清单与配置"""
    _run_config(config_path, seed, threads)
    checkpoint = read_checkpoint(ckpt)
    click.echo(json.dumps({
        'version': checkpoint.version,
        'step': checkpoint.step,
        'model_config': checkpoint.model_config,
        'train_config': checkpoint.train_config,
        'vocabulary_size': len(checkpoint.vocabulary),
        'parameters': int(checkpoint.payload.size),
        'manifest': checkpoint.manifest,
    }, ensure_ascii=False, indent=2))


@cli.command('benchmark')
@common_options
@click.option('--ckpt', default=None, help='检查点文件')
@click.option('--teacher', is_flag=True, help='用植入教师打分')
@click.option('--data', default=None, help='数据集目录')
@click.option('--out', default=None, help='基准结果 JSON 输出路径')
def benchmark_command(config_path, seed, threads, ckpt, teacher, data, out):
    """每个生成器在各类别、各维度上的平均得分"""
    run = _run_config(config_path, seed, threads, PATHS_CHECKPOINT=ckpt)
    scorer = _load_scorer(None if teacher else run.paths.get('checkpoint'), teacher, None)
    dataset = load_dataset(_require(run, 'data', data, '--data'))
    result = benchmark_generators(scorer, dataset, threads=run.threads)
    if out is not None:
        _write_json(Path(out), result)
    click.echo(render_benchmark(result), nl=False)


@cli.command('compare')
@common_options
@click.argument('reports', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--html', 'html_path', default=None, help='HTML 对比报告输出路径')
def compare_command(config_path, seed, threads, reports, html_path):
    """并排比较多份 EvalReport（行名取文件名）"""
    _run_config(config_path, seed, threads)
    loaded = {Path(p).stem: EvalReport.load(p) for p in reports}
    if html_path is not None:
        atomic_write_text(html_path, generate_html_comparison(loaded))
    click.echo(render_comparison(loaded), nl=False)


def dispatch(argv: Sequence[str] = None) -> int:
    """执行恰好一个子命令并返回退出码"""
    try:
        rv = cli.main(args=list(argv) if argv is not None else None, prog_name='mps', standalone_mode=False)
    except click.UsageError as e:
        if e.ctx is not None:
            click.echo(e.ctx.get_help(), err=True)
        click.echo(f'Error: {e.format_message()}', err=True)
        return EXIT_USAGE
    except click.ClickException as e:
        e.show()
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except MPSError as e:
        logger.error(f'{type(e).__name__}: {e}', extra={'fields': {'error': type(e).__name__}})
        return EXIT_RUNTIME
    except OSError as e:
        logger.error(f'文件错误: {e}', extra={'fields': {'error': 'OSError'}})
        return EXIT_RUNTIME
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == '__main__':
    sys.exit(dispatch())
