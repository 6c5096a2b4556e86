import math
from dataclasses import replace

import pytest

from config import DIMENSIONS, PROMPT_CATEGORIES
from core.analyzer import PromptAnalyzer, category_histogram
from core.annotation import PreferenceLabel
from core.dataset import PreferenceDataset, Prompt


def _prompts(per_category):
    return [Prompt(f'p{c}{i}', 'a fox', category)
            for c, (category, n) in enumerate(zip(PROMPT_CATEGORIES, per_category)) for i in range(n)]


def test_balanced_histogram():
    histogram = category_histogram(_prompts([100] * 7))
    assert set(histogram.counts.values()) == {100}
    assert histogram.imbalance == 1.0
    assert histogram.total == 700


def test_empty_category_is_infinite():
    histogram = category_histogram(_prompts([3, 0, 1, 1, 1, 1, 1]))
    assert histogram.counts['Scenes'] == 0
    assert math.isinf(histogram.imbalance)
    assert histogram.total == 8


def test_long_tail_ratio():
    histogram = category_histogram(_prompts([12, 3, 4, 6, 5, 4, 3]))
    assert histogram.imbalance == 4.0
    assert histogram.to_dict()['counts']['Characters'] == 12


def test_statistics(tiny_dataset):
    stats = PromptAnalyzer(tiny_dataset).get_statistics()
    assert stats['prompts'] == 28 and stats['pairs'] == 28 and stats['images'] == 56
    assert stats['annotations'] == 28 * len(DIMENSIONS)
    assert sum(stats['splits'].values()) == 28
    assert stats['category_histogram']['imbalance'] == 1.0
    assert all(v == {'prompts': 4, 'images': 8, 'pairs': 4} for v in stats['category_stats'].values())
    assert stats['tie_rates'] == {d: 0.0 for d in DIMENSIONS}
    assert stats['soft_label_rate'] == 0.0


def test_tie_and_soft_rates(tiny_dataset):
    pairs = list(tiny_dataset.pairs)
    pairs[0] = replace(pairs[0], labels={**pairs[0].labels, 'detail': PreferenceLabel(0.5, 0.5)})
    pairs[1] = replace(pairs[1], labels={**pairs[1].labels, 'overall': PreferenceLabel(5 / 6, 1 - 5 / 6)})
    analyzer = PromptAnalyzer(PreferenceDataset(tiny_dataset.prompts, tiny_dataset.images, pairs))
    assert analyzer.tie_rates()['detail'] == pytest.approx(1 / 28)
    assert analyzer.soft_label_rate() == pytest.approx(1 / (28 * 4))
    assert analyzer.same_model_fraction('holdout') == 0.0
