import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from app.config import ModelConfig, SynthSpec
from app.corpus.synth import draw_glyph, glyph_for_class, make_sticker_sets, style_for_set
from app.errors import DimensionError
from app.network import StickerEncoder, StickerResponseSelector, classification_loss
from app.numerics import ParamStore, Tensor, grad_check
from app.trainer import pretrain_sticker_encoder


def make_encoder(**overrides):
    config = ModelConfig(**{'hidden': 8, 'grid_size': 2, 'image_size': 32, 'conv_channels': (2, 4, 4, 4),
                            'emoji_classes': 5, **overrides})
    return StickerEncoder(ParamStore(config.dtype), config, np.random.default_rng(0))


def test_full_scale_geometry_shapes(rng):
    config = ModelConfig(hidden=100, grid_size=4, image_size=128)
    encoder = StickerEncoder(ParamStore(), config, np.random.default_rng(0))
    out = encoder.encode(rng.random((128, 128, 1)))
    assert out.grid.shape == (4, 4, 100)
    assert out.flat.shape == (100,)
    assert out.cells.shape == (16, 100)
    assert np.all(np.isfinite(out.grid.data))


def test_batched_shapes(rng):
    out = make_encoder().encode(rng.random((3, 32, 32, 1)))
    assert out.grid.shape == (3, 2, 2, 8)
    assert out.flat.shape == (3, 8)


def test_identical_images_encode_identically(rng):
    encoder = make_encoder()
    image = rng.random((32, 32, 1))
    first, second = encoder.encode(image), encoder.encode(image.copy())
    assert_array_equal(first.grid.data, second.grid.data)
    assert_array_equal(first.flat.data, second.flat.data)


def test_distinct_glyphs_have_distinct_flat_vectors():
    encoder = make_encoder()
    style = style_for_set(0, 32)
    a = encoder.encode(draw_glyph(glyph_for_class(0), style, 32)).flat.data
    b = encoder.encode(draw_glyph(glyph_for_class(1), style, 32)).flat.data
    assert abs(np.linalg.norm(a) - np.linalg.norm(b)) > 0


@pytest.mark.parametrize('shape', [(64, 64, 1), (32, 32, 3), (32, 32)])
def test_wrong_geometry_raises(shape):
    with pytest.raises(DimensionError):
        make_encoder().encode(np.zeros(shape))


def test_translation_changes_only_nearby_cells():
    encoder = make_encoder(image_size=64, grid_size=4)
    image = np.zeros((64, 64, 1))
    image[2:6, 2:6] = 1.0
    shifted = np.zeros((64, 64, 1))
    shifted[3:7, 3:7] = 1.0
    before = encoder.encode(image).grid.data
    after = encoder.encode(shifted).grid.data
    # cells in the last row or column only see pixels 33..63
    assert_allclose(before[3, :], after[3, :], atol=1e-12)
    assert_allclose(before[:, 3], after[:, 3], atol=1e-12)


# ----------------------------------------------------------------------
# Emoji head
# ----------------------------------------------------------------------

def test_zero_head_gives_uniform_logits():
    encoder = make_encoder()
    encoder['emoji.weight'].data[:] = 0.0
    encoder['emoji.bias'].data[:] = 0.0
    logits = encoder.classify_emoji(Tensor(np.zeros(8)))
    assert logits.shape == (5,)
    assert_array_equal(logits.data, np.zeros(5))
    assert abs(classification_loss(logits, 3).item() - math.log(5)) < 1e-12


def test_head_shape_contract(rng):
    encoder = make_encoder()
    assert encoder.classify_emoji(Tensor(rng.normal(size=(4, 8)))).shape == (4, 5)


def test_disabled_head_raises():
    encoder = StickerEncoder(ParamStore(), ModelConfig(hidden=8, grid_size=2, image_size=32,
                                                       conv_channels=(2, 4, 4, 4)),
                             np.random.default_rng(0), classify=False)
    assert 'sticker.emoji.weight' not in encoder.store
    with pytest.raises(DimensionError):
        encoder.classify_emoji(Tensor(np.zeros(8)))


def test_uniform_logits_over_ten_classes():
    assert abs(classification_loss(Tensor(np.zeros(10)), 7).item() - 2.302585) < 1e-6


def test_peaked_logits_give_vanishing_loss():
    logits = np.zeros(10)
    logits[2] = 60.0
    assert classification_loss(Tensor(logits), 2).item() < 1e-20


def test_loss_matches_direct_formula(rng):
    logits = rng.normal(scale=3.0, size=(6, 7))
    labels = rng.integers(0, 7, size=6)
    expected = np.mean([-np.log(np.exp(row[y]) / np.exp(row).sum()) for row, y in zip(logits, labels)])
    assert abs(classification_loss(Tensor(logits), labels).item() - expected) < 1e-12


def test_out_of_range_label_raises():
    with pytest.raises(DimensionError):
        classification_loss(Tensor(np.zeros(4)), 4)


# ----------------------------------------------------------------------
# Gradients and learnability
# ----------------------------------------------------------------------

def test_gradient_reaches_every_parameter(rng):
    encoder = make_encoder(hidden=4, conv_channels=(2, 2, 2, 2), emoji_classes=3)
    images = rng.random((2, 32, 32, 1))
    grid_weights = rng.normal(size=(2, 2, 2, 4))
    flat_weights = rng.normal(size=(2, 4))

    def loss():
        out = encoder.encode(images)
        return ((out.grid * grid_weights).sum() + (out.flat * flat_weights).sum()
                + classification_loss(encoder.classify_emoji(out.flat), np.array([0, 2])))

    assert grad_check(loss, encoder.store, floor=1e-6, max_entries=12, kink_tolerant=True) < 1e-4


@pytest.mark.slow
def test_emoji_head_learns_synthetic_glyphs():
    spec = SynthSpec(sets=4, image_size=32, vocab_size=60, seed=1)
    assert spec.classes == 10
    stickers = [s for members in make_sticker_sets(spec, np.random.default_rng(spec.seed)).values()
                for s in members]
    model = StickerResponseSelector(ModelConfig(vocab_size=4, hidden=16, grid_size=2, image_size=32,
                                                emoji_classes=spec.classes, dropout=0.0))
    accuracy = pretrain_sticker_encoder(model, stickers, epochs=50, lr=1e-2, batch_size=4)
    assert max(accuracy) >= 0.9
