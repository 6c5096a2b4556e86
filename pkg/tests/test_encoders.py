import numpy as np
import pytest

from core.conditions import ConditionSpec, Dimension, parse_dimension, parse_dimensions
from core.encoders import (ImageEncoder, TextEncoder, condition_token_count, encode_condition, encode_image,
                           encode_images, encode_text, encode_texts)
from core.errors import ConfigError, ShapeError, VocabularyError
from core.layers import causal_mask, merge_heads, split_heads
from core.params import ModelParams
from core.tensor import Tensor
from core.tokenizer import tokenize


@pytest.fixture
def text_encoder(tiny_vocabulary):
    return TextEncoder(ModelParams(), len(tiny_vocabulary), 16, 1, 2, 32, np.random.default_rng(0))


@pytest.fixture
def image_encoder():
    return ImageEncoder(ModelParams(), 32, 3, 8, 16, 1, 2, np.random.default_rng(0))


def test_text_shape(text_encoder, tiny_vocabulary):
    x_t = encode_text(tokenize('a fox near the lake', tiny_vocabulary), text_encoder)
    assert x_t.shape == (7, 16)


def test_identical_prompts_identical_features(text_encoder, tiny_vocabulary):
    a = encode_text(tokenize('a golden fox', tiny_vocabulary), text_encoder)
    b = encode_text(tokenize('a golden fox', tiny_vocabulary), text_encoder)
    np.testing.assert_array_equal(a.data, b.data)


def test_one_token_changes_features(text_encoder, tiny_vocabulary):
    a = encode_text(tokenize('a golden fox', tiny_vocabulary), text_encoder)
    b = encode_text(tokenize('a golden owl', tiny_vocabulary), text_encoder)
    assert not np.allclose(a.data, b.data)


def test_text_encoder_is_causal(text_encoder, tiny_vocabulary):
    short = encode_text(tokenize('a fox', tiny_vocabulary), text_encoder).data
    ids = list(tokenize('a fox near the lake', tiny_vocabulary).ids)
    longer = text_encoder(np.asarray(ids)[None]).data[0]
    np.testing.assert_allclose(longer[:3], short[:3], atol=1e-6)


def test_batch_padding_does_not_change_real_rows(text_encoder, tiny_vocabulary):
    alone, _ = encode_texts(['a fox'], tiny_vocabulary, text_encoder)
    batch, lengths = encode_texts(['a fox', 'a quiet fox near the lake'], tiny_vocabulary, text_encoder)
    assert lengths.tolist() == [4, 8]
    np.testing.assert_allclose(batch.data[0, :4], alone.data[0], atol=1e-6)


def test_out_of_range_id(text_encoder):
    with pytest.raises(VocabularyError):
        text_encoder(np.array([[0, 10 ** 6]]))


def test_image_rows(image_encoder):
    x_v = encode_image(np.zeros((32, 32, 3), dtype=np.float32), image_encoder)
    assert x_v.shape == (17, 16)
    assert image_encoder.n_rows == 17


def test_images_differ_and_repeat(image_encoder):
    zeros = encode_image(np.zeros((32, 32, 3), dtype=np.float32), image_encoder).data
    ones = encode_image(np.ones((32, 32, 3), dtype=np.float32), image_encoder).data
    again = encode_image(np.ones((32, 32, 3), dtype=np.float32), image_encoder).data
    assert not np.allclose(zeros, ones)
    np.testing.assert_array_equal(ones, again)


def test_patchify_row_major(image_encoder):
    pixels = np.zeros((1, 32, 32, 3), dtype=np.float32)
    pixels[0, 0:8, 8:16] = 1.0
    patches = image_encoder.patchify(pixels)
    assert patches.shape == (1, 16, 192)
    assert np.flatnonzero(patches[0].sum(axis=-1)).tolist() == [1]


def test_image_size_mismatch(image_encoder):
    with pytest.raises(ShapeError):
        image_encoder(np.zeros((1, 30, 30, 3)))
    with pytest.raises(ShapeError):
        ImageEncoder(ModelParams(), 30, 3, 8, 16, 1, 2, np.random.default_rng(0))


def test_condition_token_counts(tiny_vocabulary):
    assert condition_token_count(ConditionSpec.for_dimension('alignment'), tiny_vocabulary, 32) == 7
    assert condition_token_count(ConditionSpec.for_dimension('aesthetics'), tiny_vocabulary, 32) == 9


def test_condition_features_deterministic(text_encoder, tiny_vocabulary):
    spec = ConditionSpec.for_dimension('detail')
    a = encode_condition(spec, tiny_vocabulary, text_encoder)
    b = encode_condition(spec, tiny_vocabulary, text_encoder)
    np.testing.assert_array_equal(a.data, b.data)


def test_dimension_parsing():
    assert parse_dimension('Detail') is Dimension.DETAIL
    assert Dimension.ALIGNMENT.index == 2
    assert [d.value for d in parse_dimensions(['overall', 'overall', 'detail'])] == ['overall', 'detail']
    with pytest.raises(ConfigError):
        parse_dimension('sharpness')
    with pytest.raises(ConfigError):
        ConditionSpec.custom('empty', [])


def test_heads_round_trip():
    x = Tensor(np.arange(2 * 5 * 8, dtype=np.float32).reshape(2, 5, 8))
    split = split_heads(x, 4)
    assert split.shape == (2, 4, 5, 2)
    np.testing.assert_array_equal(merge_heads(split).data, x.data)


def test_causal_mask():
    mask = causal_mask(3)
    assert np.isneginf(mask[0, 1]) and mask[1, 0] == 0.0 and mask[2, 2] == 0.0


def test_batched_images_match_single(image_encoder):
    pixels = np.random.default_rng(3).random((3, 32, 32, 3)).astype(np.float32)
    batch = encode_images(pixels, image_encoder)
    assert batch.shape == (3, 17, 16)
    for i in range(3):
        np.testing.assert_allclose(batch.data[i], encode_image(pixels[i], image_encoder).data, atol=1e-6)
