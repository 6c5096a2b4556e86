"""
报告渲染模块：终端表格与 HTML 对比报告
"""

from html import escape
from typing import Dict, Mapping, Sequence

from config import DIMENSION_NAMES, DIMENSIONS

from .file_utils import format_count, format_percent


def _get_attr(obj, attr, default=None):
    """安全获取属性（支持对象和字典两种格式）"""
    if isinstance(obj, dict):
        return obj.get(attr, default)
    return getattr(obj, attr, default)


def _dimension_results(report) -> Dict:
    return _get_attr(report, 'dimensions', {}) or {}


def _cell(result, attr: str) -> str:
    value = _get_attr(result, attr)
    if value is None:
        return '-'
    if attr == 'pearson_r':
        return f'{value:.4f}'
    return format_percent(value)


def render_report_table(report) -> str:
    """
    单个评估报告的终端表格
    维度 | 准确率 | 半分准确率 | Pearson R | 图像对 | 平局
    """
    header = f'{"维度":<12}{"准确率":>10}{"半分":>10}{"R":>10}{"图像对":>10}{"平局":>8}'
    lines = [f'评估器: {_get_attr(report, "scorer", "")}  划分: {_get_attr(report, "split", "")}  '
             f'平局策略: {_get_attr(report, "tie_policy", "")}', header, '-' * len(header)]
    for dim, result in _dimension_results(report).items():
        lines.append(
            f'{dim:<12}{_cell(result, "accuracy"):>10}{_cell(result, "half_credit_accuracy"):>10}'
            f'{_cell(result, "pearson_r"):>10}{format_count(_get_attr(result, "pairs", 0)):>10}'
            f'{_get_attr(result, "ties", 0):>8}'
        )
    return '\n'.join(lines) + '\n'


def render_comparison(reports: Mapping[str, object], dimensions: Sequence[str] = DIMENSIONS) -> str:
    """多份报告按行并排：一行一个模型，一列一个维度的准确率"""
    name_width = max([len(n) for n in reports] + [8]) + 2
    header = f'{"模型":<{name_width}}' + ''.join(f'{d:>12}' for d in dimensions)
    lines = [header, '-' * len(header)]
    for name, report in reports.items():
        results = _dimension_results(report)
        cells = ''.join(f'{_cell(results[d], "accuracy") if d in results else "-":>12}' for d in dimensions)
        lines.append(f'{name:<{name_width}}{cells}')
    return '\n'.join(lines) + '\n'


def render_benchmark(benchmark: Mapping[str, Mapping[str, Mapping[str, float]]],
                     dimensions: Sequence[str] = DIMENSIONS) -> str:
    """生成器 × 类别的平均得分表"""
    header = f'{"生成器":<10}{"类别":<12}' + ''.join(f'{d:>12}' for d in dimensions)
    lines = [header, '-' * len(header)]
    for generator, categories in benchmark.items():
        for category, means in categories.items():
            cells = ''.join(f'{means[d]:>12.4f}' if d in means else f'{"-":>12}' for d in dimensions)
            lines.append(f'{generator:<10}{category:<12}{cells}')
    return '\n'.join(lines) + '\n'


def generate_html_comparison(reports: Mapping[str, object], dimensions: Sequence[str] = DIMENSIONS,
                             title: str = 'MPS 评估对比') -> str:
    """
    生成HTML对比报告
    不写入生成时间，相同输入得到相同字节
    """
    head_cells = ''.join(f'<th>{escape(DIMENSION_NAMES.get(d, d))}<br><small>{escape(d)}</small></th>'
                         for d in dimensions)

    rows = ''
    for name, report in reports.items():
        results = _dimension_results(report)
        cells = ''
        for d in dimensions:
            if d not in results:
                cells += '<td>-</td>'
                continue
            cells += (f'<td>{_cell(results[d], "accuracy")}'
                      f'<div class="sub">半分 {_cell(results[d], "half_credit_accuracy")} · '
                      f'R {_cell(results[d], "pearson_r")}</div></td>')
        rows += f'''
        <tr>
            <td>{escape(name)}<div class="sub">{escape(str(_get_attr(report, "checkpoint_fingerprint", "")))}</div></td>
            {cells}
        </tr>
        '''

    html = f'''<!DOCTYPE html>
<html lang="zh-CN">
<head>
    <meta charset="UTF-8">
    <title>{escape(title)}</title>
    <style>
        body {{
            font-family: -apple-system, BlinkMacSystemFont, "Segoe UI", Roboto, "Helvetica Neue", Arial, sans-serif;
            background: #f5f7fa;
            color: #333;
            padding: 20px;
        }}
        .section {{
            background: white;
            border-radius: 10px;
            padding: 20px;
            box-shadow: 0 2px 10px rgba(0,0,0,0.1);
        }}
        .data-table {{
            width: 100%;
            border-collapse: collapse;
            font-size: 14px;
        }}
        .data-table th,
        .data-table td {{
            padding: 12px;
            text-align: left;
            border-bottom: 1px solid #eee;
        }}
        .data-table th {{
            background: #f8f9fa;
        }}
        .sub {{
            font-size: 12px;
            color: #999;
        }}
    </style>
</head>
<body>
    <div class="section">
        <h2>{escape(title)}</h2>
        <table class="data-table">
            <thead>
                <tr>
                    <th>模型</th>
                    {head_cells}
                </tr>
            </thead>
            <tbody>
                {rows}
            </tbody>
        </table>
    </div>
</body>
</html>
'''
    return html
