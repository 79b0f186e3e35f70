import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batinet import imaging
from batinet.text import (COLORS, N_CLASSES, SHAPES, T_MAX, VOCAB, Caption, attribute_class,
                          caption_for, class_attributes, parse_attributes, tokenize)


def test_tokenize_known_and_unknown_words():
    cap = tokenize("A Red ellipse, zebra!")
    assert cap.tokens[0] == VOCAB.id("a")
    assert cap.tokens[-1] == 1
    assert VOCAB.decode(cap.tokens[:3]) == "a red ellipse"


def test_tokenize_truncates_to_tmax():
    cap = tokenize(" ".join(["bird"] * (T_MAX + 5)))
    assert len(cap.tokens) == T_MAX


def test_caption_validation():
    with pytest.raises(ValueError):
        Caption("", ())
    with pytest.raises(ValueError):
        Caption("x", (len(VOCAB),))
    with pytest.raises(ValueError):
        tokenize("!!!")


def test_attribute_classes_roundtrip():
    seen = set()
    for c in COLORS:
        for s in SHAPES:
            k = attribute_class(c, s)
            assert class_attributes(k) == (c, s)
            assert parse_attributes(caption_for(c, s)) == (c, s)
            seen.add(k)
    assert seen == set(range(N_CLASSES))


def test_parse_attributes_missing_slot():
    assert parse_attributes(tokenize("a small bird")) == (None, None)


def test_check_image_rejects_bad_input():
    with pytest.raises(imaging.ImageError):
        imaging.check_image(np.zeros((4, 4)))
    with pytest.raises(imaging.ImageError):
        imaging.check_image(np.full((3, 4, 4), 1.5))
    with pytest.raises(imaging.ImageError):
        imaging.check_image(np.full((3, 4, 4), np.nan))


def test_check_mask_binary_and_shape():
    with pytest.raises(imaging.ImageError):
        imaging.check_mask(np.full((4, 4), 0.5), binary=True)
    with pytest.raises(imaging.ImageError):
        imaging.check_mask(np.zeros((4, 4)), shape=(5, 4))


def test_png_roundtrip_is_quantization(tmp_path, rng):
    img = rng.uniform(0, 1, (3, 9, 7))
    imaging.save_image(tmp_path / "a.png", img)
    back = imaging.load_image(tmp_path / "a.png")
    np.testing.assert_array_equal(back, imaging.quantize(img))
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_mask_roundtrip_exact_for_binary(tmp_path, rng):
    m = (rng.uniform(size=(6, 5)) > 0.5).astype(float)
    imaging.save_mask(tmp_path / "m.png", m)
    np.testing.assert_array_equal(imaging.load_mask(tmp_path / "m.png"), m)


def test_round_half_up():
    assert imaging.to_uint8(np.array([0.5 / 255]))[0] == 1
    assert imaging.to_uint8(np.array([1.0]))[0] == 255


def test_resize_area_average_when_shrinking():
    a = np.arange(16, dtype=float).reshape(4, 4) / 16
    out = imaging.resize(a, 2, 2)
    expect = np.array([[a[:2, :2].mean(), a[:2, 2:].mean()], [a[2:, :2].mean(), a[2:, 2:].mean()]])
    np.testing.assert_allclose(out, expect, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 12), st.integers(2, 12), st.integers(2, 12), st.integers(2, 12))
def test_resize_stays_in_range(h, w, h2, w2):
    img = np.random.default_rng(h * 100 + w).uniform(0, 1, (3, h, w))
    out = imaging.resize(img, h2, w2)
    assert out.shape == (3, h2, w2)
    assert out.min() >= 0 and out.max() <= 1
