import numpy as np
import pytest

from config import DIMENSIONS
from core.base_scorer import PreferenceScorer
from core.errors import ConfigError, EvaluationError
from core.ranker import rank_images
from core.scorers import ConstantScorer, PlantedTeacherScorer
from core.synthetic import generate_synthetic_dataset
from tests.conftest import tiny_generator_config


@pytest.fixture(scope='module')
def four_per_prompt():
    return generate_synthetic_dataset(tiny_generator_config(prompts_per_category=2, images_per_prompt=4))


def test_teacher_top_matches_brute_force(four_per_prompt):
    teacher = PlantedTeacherScorer()
    for prompt_id, prompt in four_per_prompt.prompts.items():
        images = four_per_prompt.images_for_prompt(prompt_id)
        result = rank_images(teacher, prompt, images, 'detail')
        best = max(images, key=lambda im: im.teacher_q[3])
        assert result.top == best.id
        assert result.scores == sorted(result.scores, reverse=True)
        assert sorted(result.image_ids) == sorted(im.id for im in images)


def test_ties_broken_by_image_id(four_per_prompt):
    prompt_id = next(iter(four_per_prompt.prompts))
    images = four_per_prompt.images_for_prompt(prompt_id)
    result = rank_images(ConstantScorer(), four_per_prompt.prompt(prompt_id), list(reversed(images)), 'overall')
    assert result.image_ids == sorted(im.id for im in images)


def test_model_ranking_is_consistent_with_scores(tiny_model, tiny_dataset):
    prompt_id = next(iter(tiny_dataset.prompts))
    prompt = tiny_dataset.prompt(prompt_id)
    images = tiny_dataset.images_for_prompt(prompt_id)
    result = rank_images(tiny_model, prompt, images, 'Aesthetics')
    scores = tiny_model.score_images(prompt, images, 'aesthetics')
    assert result.top == images[int(np.argmax(scores))].id
    assert result.condition == 'aesthetics'
    assert result.to_dict()['image_ids'] == result.image_ids


def test_rank_errors(four_per_prompt):
    prompt_ids = list(four_per_prompt.prompts)
    prompt = four_per_prompt.prompt(prompt_ids[0])
    with pytest.raises(EvaluationError):
        rank_images(ConstantScorer(), prompt, [], 'overall')
    with pytest.raises(EvaluationError):
        rank_images(ConstantScorer(), prompt, four_per_prompt.images_for_prompt(prompt_ids[1]), 'overall')
    with pytest.raises(ConfigError):
        rank_images(ConstantScorer(), prompt, four_per_prompt.images_for_prompt(prompt_ids[0]), 'sharpness')


class _Warped(PreferenceScorer):
    """对内部打分器的得分施加严格递增变换 x³ + 2x + 1"""

    def __init__(self, inner: PreferenceScorer):
        self.inner = inner

    @property
    def name(self) -> str:
        return f'warped-{self.inner.name}'

    def score_images(self, prompt, images, dimension):
        x = self.inner.score_images(prompt, images, dimension)
        return x ** 3 + 2.0 * x + 1.0

    def fingerprint(self) -> str:
        return self.inner.fingerprint()


def test_order_survives_increasing_transform(four_per_prompt, make_model):
    for scorer in (PlantedTeacherScorer(), make_model(seed=3)):
        for prompt_id, prompt in four_per_prompt.prompts.items():
            images = four_per_prompt.images_for_prompt(prompt_id)
            for dim in DIMENSIONS:
                plain = rank_images(scorer, prompt, images, dim)
                warped = rank_images(_Warped(scorer), prompt, images, dim)
                assert warped.image_ids == plain.image_ids
