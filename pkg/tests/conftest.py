import numpy as np
import pytest

from core.model import ModelConfig, MPSModel
from core.synthetic import GeneratorConfig, generate_synthetic_dataset
from core.tokenizer import build_vocabulary

TINY_MODEL = dict(width=16, depth=1, heads=2, cross_heads=2, image_size=8, channels=3, patch_size=4,
                  max_length=24, vocab_size=256)


def tiny_model_config(**overrides) -> ModelConfig:
    return ModelConfig(**{**TINY_MODEL, **overrides})


def tiny_generator_config(**overrides) -> GeneratorConfig:
    values = dict(seed=0, prompts_per_category=4, image_size=8, channels=3)
    values.update(overrides)
    return GeneratorConfig(**values)


@pytest.fixture(scope='session')
def tiny_dataset():
    return generate_synthetic_dataset(tiny_generator_config())


@pytest.fixture(scope='session')
def tiny_vocabulary(tiny_dataset):
    return build_vocabulary([p.text for p in tiny_dataset.prompts.values()], 256)


@pytest.fixture
def tiny_model(tiny_vocabulary):
    return MPSModel(tiny_model_config(), tiny_vocabulary, np.random.default_rng(0))


@pytest.fixture
def make_model(tiny_vocabulary):
    def _make(seed: int = 0, **overrides) -> MPSModel:
        return MPSModel(tiny_model_config(**overrides), tiny_vocabulary, np.random.default_rng(seed))
    return _make
