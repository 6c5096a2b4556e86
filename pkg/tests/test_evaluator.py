import json

import numpy as np
import pytest
from scipy.stats import pearsonr

from config import DIMENSIONS, PROMPT_CATEGORIES
from core.errors import EvaluationError
from core.evaluator import (EvalConfig, EvalReport, accuracy_from_scores, benchmark_generators,
                            expected_teacher_accuracy, export_attention, pearson_r, per_dimension_report,
                            preference_accuracy)
from core.scorers import ConstantScorer, PlantedTeacherScorer
from core.synthetic import generate_synthetic_dataset
from tests.conftest import tiny_generator_config


@pytest.fixture(scope='module')
def eval_dataset():
    return generate_synthetic_dataset(tiny_generator_config(prompts_per_category=10, seed=4))


def test_accuracy_seven_of_ten():
    labels = np.array([[1.0, 0.0]] * 10)
    scores = np.array([[1.0, 0.0]] * 7 + [[0.0, 1.0]] * 3)
    assert accuracy_from_scores(scores, labels) == (70.0, 10, 0)


def test_tie_policies():
    scores = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.2, 0.1]])
    labels = np.array([[1.0, 0.0], [1.0, 0.0], [0.5, 0.5], [5 / 6, 1 / 6]])
    accuracy, considered, ties = accuracy_from_scores(scores, labels, 'exclude')
    assert (considered, ties) == (3, 1)
    assert accuracy == pytest.approx(200 / 3)
    assert accuracy_from_scores(scores, labels, 'half-credit') == (62.5, 4, 1)
    with pytest.raises(EvaluationError):
        accuracy_from_scores(scores, labels, 'coin-flip')


def test_all_ties_cannot_be_excluded():
    labels = np.array([[0.5, 0.5]] * 3)
    with pytest.raises(EvaluationError):
        accuracy_from_scores(np.zeros((3, 2)), labels, 'exclude')
    assert accuracy_from_scores(np.zeros((3, 2)), labels, 'half-credit')[0] == 50.0


def test_equal_scores_pick_first_image():
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert accuracy_from_scores(np.zeros((2, 2)), labels)[0] == 50.0


def test_pearson_matches_scipy():
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=50), rng.normal(size=50)
    assert pearson_r(x, y) == pytest.approx(pearsonr(x, y)[0], abs=1e-12)
    points = ([1.0, 2.0, 3.0, 4.0, 6.0], [2.0, 1.0, 4.0, 3.0, 7.0])
    assert pearson_r(*points) == pytest.approx(pearsonr(*points)[0], abs=1e-12)


def test_pearson_extremes():
    assert pearson_r([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson_r([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson_r([5, 5, 5], [1, 2, 3]) == 0.0
    with pytest.raises(EvaluationError):
        pearson_r([1, 2, 3], [4, 4, 4])
    with pytest.raises(EvaluationError):
        pearson_r([1, 2], [1, 2, 3])
    with pytest.raises(EvaluationError):
        pearson_r([1], [1])


def test_expected_teacher_accuracy():
    assert expected_teacher_accuracy(0.0) == 100.0
    assert expected_teacher_accuracy(0.2) == pytest.approx(89.6)
    assert expected_teacher_accuracy(0.5) == pytest.approx(50.0)
    with pytest.raises(EvaluationError):
        expected_teacher_accuracy(1.0)


def test_teacher_is_perfect_on_noiseless_data(eval_dataset):
    teacher = PlantedTeacherScorer()
    for dim in DIMENSIONS:
        assert preference_accuracy(teacher, eval_dataset.pairs, eval_dataset, dim) == 100.0


def test_sharp_teacher_correlation_is_one(eval_dataset):
    report = per_dimension_report(PlantedTeacherScorer(sharpness=1e6), eval_dataset, split='train')
    for dim in DIMENSIONS:
        assert report.dimensions[dim].pearson_r == pytest.approx(1.0, abs=1e-3)
        assert report.accuracy(dim) == 100.0


def test_constant_scorer_gets_base_rate(eval_dataset):
    pairs = eval_dataset.split('train')
    report = per_dimension_report(ConstantScorer(), eval_dataset, split='train')
    for dim in DIMENSIONS:
        first_wins = sum(p.label(dim).winner == 0 for p in pairs)
        assert report.accuracy(dim) == pytest.approx(100.0 * first_wins / len(pairs))
        assert report.dimensions[dim].pearson_r == 0.0


def test_report_fields_and_round_trip(tmp_path, eval_dataset):
    report = per_dimension_report(PlantedTeacherScorer(), eval_dataset, split='train', dimensions=['Detail'],
                                  config_fingerprint='abc')
    assert list(report.dimensions) == ['detail']
    result = report.dimensions['detail']
    assert result.pairs == len(eval_dataset.split('train'))
    assert result.exclude_accuracy == result.accuracy == 100.0
    assert result.half_credit_accuracy == 100.0
    assert report.checkpoint_fingerprint == 'teacher-1'
    report.save(tmp_path / 'report.json')
    assert EvalReport.load(tmp_path / 'report.json') == report
    data = json.loads((tmp_path / 'report.json').read_text(encoding='utf-8'))
    assert data['schema_version'] == 1 and data['config_fingerprint'] == 'abc'


def test_report_rejects_bad_files(tmp_path):
    (tmp_path / 'bad.json').write_text('{', encoding='utf-8')
    with pytest.raises(EvaluationError):
        EvalReport.load(tmp_path / 'bad.json')
    (tmp_path / 'old.json').write_text(json.dumps({'schema_version': 0}), encoding='utf-8')
    with pytest.raises(EvaluationError):
        EvalReport.load(tmp_path / 'old.json')


def test_empty_split(eval_dataset):
    with pytest.raises(EvaluationError):
        per_dimension_report(ConstantScorer(), eval_dataset, split='holdout')


def test_eval_config_validation():
    with pytest.raises(EvaluationError):
        EvalConfig(tie_policy='coin-flip')
    with pytest.raises(EvaluationError):
        EvalConfig(batch_size=0)


def test_teacher_needs_latents(eval_dataset):
    image = next(iter(eval_dataset.images.values()))
    stripped = type(image)(image.id, image.prompt_id, image.pixels_path, image.seed)
    with pytest.raises(EvaluationError):
        PlantedTeacherScorer().score_images(eval_dataset.prompt(image.prompt_id), [stripped], 'overall')


def _first_image(dataset):
    image = next(iter(dataset.images.values()))
    return dataset.prompt(image.prompt_id).text, image.pixels


def test_export_attention(tmp_path, make_model, tiny_dataset):
    model = make_model(mask_mode='hard', threshold=0.0)
    prompt, pixels = _first_image(tiny_dataset)
    record = export_attention(model, prompt, pixels, 'detail', tmp_path / 'attn.json')
    n_p = len(record['tokens'])
    assert record['tokens'][0] == '<bos>' and record['tokens'][-1] == '<eos>'
    assert len(record['keep']) == len(record['token_values']) == len(record['cls_attention']) == n_p
    assert np.array(record['patch_grid']).shape == (2, 2)
    if 0 not in record['fallback_rows']:
        assert sum(record['cls_attention']) == pytest.approx(1.0, abs=1e-5)
        for keep, weight in zip(record['keep'], record['cls_attention']):
            if not keep:
                assert weight == 0.0
    assert json.loads((tmp_path / 'attn.json').read_text(encoding='utf-8')) == record


def test_export_attention_mask_off_keeps_every_token(make_model, tiny_dataset):
    prompt, pixels = _first_image(tiny_dataset)
    record = export_attention(make_model(mask_mode='off'), prompt, pixels, 'overall')
    assert all(record['keep'])
    assert record['fallback_rows'] == []


def test_export_attention_needs_cross_attention(make_model, tiny_dataset):
    prompt, pixels = _first_image(tiny_dataset)
    with pytest.raises(EvaluationError):
        export_attention(make_model(fusion='base'), prompt, pixels, 'overall')


def test_benchmark_generators(eval_dataset):
    table = benchmark_generators(PlantedTeacherScorer(), eval_dataset, ['overall'])
    assert set(table) <= {f'g{g}' for g in range(6)}
    for per_category in table.values():
        assert set(per_category) <= set(PROMPT_CATEGORIES)
        for means in per_category.values():
            assert 0.0 <= means['overall'] <= 1.0
    generator = sorted(table)[0]
    category = next(iter(table[generator]))
    images = [im for im in eval_dataset.images.values()
              if f'g{im.generator}' == generator and eval_dataset.prompt(im.prompt_id).category == category]
    assert table[generator][category]['overall'] == pytest.approx(np.mean([im.teacher_q[0] for im in images]))


@pytest.mark.parametrize('scale, shift', [(2.0, 0.0), (0.001, -5.0), (37.5, 12.0)])
def test_pearson_unchanged_by_positive_affine_maps(scale, shift):
    rng = np.random.default_rng(8)
    x, y = rng.random(50), rng.random(50)
    assert pearson_r(scale * x + shift, y) == pytest.approx(pearson_r(x, y), abs=1e-10)
    assert pearson_r(x, scale * y + shift) == pytest.approx(pearson_r(x, y), abs=1e-10)


def test_accuracy_is_unchanged_when_every_pair_is_swapped(eval_dataset, make_model):
    pairs = eval_dataset.split('train')
    swapped = [pair.swapped() for pair in pairs]
    for scorer in (make_model(seed=5), PlantedTeacherScorer()):
        for dim in ('overall', 'detail'):
            for policy in ('exclude', 'half-credit'):
                forward = preference_accuracy(scorer, pairs, eval_dataset, dim, policy)
                backward = preference_accuracy(scorer, swapped, eval_dataset, dim, policy)
                assert forward == pytest.approx(backward, abs=1e-12)


def test_benchmark_independent_of_threads(eval_dataset, make_model):
    model = make_model(seed=6)
    single = benchmark_generators(model, eval_dataset, ['overall', 'detail'])
    assert benchmark_generators(model, eval_dataset, ['overall', 'detail'], threads=4) == single
    with pytest.raises(EvaluationError):
        benchmark_generators(model, eval_dataset, threads=0)
