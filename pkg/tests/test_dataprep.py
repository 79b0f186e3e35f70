import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from batinet import dataprep, imaging
from batinet.text import caption_for, parse_attributes

import oracles


def test_extract_foreground_zeroes_outside(rng):
    img = rng.uniform(0, 1, (3, 6, 6))
    mask = np.zeros((6, 6))
    mask[2:4, 1:5] = 1
    fg = dataprep.extract_foreground(img, mask)
    np.testing.assert_array_equal(fg[:, mask == 0], 0)
    np.testing.assert_array_equal(fg[:, mask == 1], img[:, mask == 1])


def test_inpaint_preserves_unmasked_pixels(rng):
    img = rng.uniform(0, 1, (3, 10, 10))
    mask = np.zeros((10, 10))
    mask[3:7, 2:8] = 1
    out = dataprep.inpaint(img, mask)
    np.testing.assert_array_equal(out[:, mask == 0], img[:, mask == 0])
    assert np.all(np.isfinite(out))


def test_inpaint_constant_image_is_constant():
    img = np.full((3, 8, 8), 0.3)
    mask = np.zeros((8, 8))
    mask[2:6, 2:6] = 1
    np.testing.assert_allclose(dataprep.inpaint(img, mask), img, atol=1e-15)


def test_inpaint_single_hole_is_neighbor_mean():
    img = np.zeros((3, 3, 3))
    img[:, 0, 1], img[:, 2, 1], img[:, 1, 0], img[:, 1, 2] = 0.1, 0.2, 0.3, 0.6
    mask = np.zeros((3, 3))
    mask[1, 1] = 1
    out = dataprep.inpaint(img, mask)
    np.testing.assert_allclose(out[:, 1, 1], 0.3)


def test_inpaint_full_mask_raises():
    with pytest.raises(dataprep.DataprepError, match="nothing known"):
        dataprep.inpaint(np.zeros((3, 4, 4)), np.ones((4, 4)))


def test_inpaint_custom_inpainter_cannot_touch_known(rng):
    img = rng.uniform(0, 1, (3, 5, 5))
    mask = np.zeros((5, 5))
    mask[1:3, 1:3] = 1
    out = dataprep.inpaint(img, mask, inpainter=lambda im, m: np.full_like(im, 0.9))
    np.testing.assert_array_equal(out[:, mask == 0], img[:, mask == 0])
    assert np.all(out[:, mask == 1] == 0.9)


def test_segment_wraps_failures():
    def broken(image):
        raise RuntimeError("boom")
    with pytest.raises(dataprep.DataprepError, match="img7"):
        dataprep.segment(np.zeros((3, 4, 4)), broken, "img7")
    with pytest.raises(dataprep.DataprepError, match="invalid mask"):
        dataprep.segment(np.zeros((3, 4, 4)), lambda im: np.full((4, 4), 0.5), "img8")


def test_threshold_segmenter():
    img = np.zeros((3, 4, 4))
    img[0, 1, 2] = 0.9
    m = dataprep.ThresholdSegmenter(0, 0.5)(img)
    assert m.sum() == 1 and m[1, 2] == 1


def test_synth_scene_is_consistent():
    t = dataprep.synth_scene(5)
    assert t.original.shape == (3, 32, 32)
    assert set(np.unique(t.mask)) <= {0.0, 1.0}
    np.testing.assert_array_equal(t.foreground, t.original * t.mask[None])
    np.testing.assert_array_equal(t.background[:, t.mask == 0], t.original[:, t.mask == 0])
    assert t.oracle_box == oracles.tight_box(t.mask)
    color, shape = parse_attributes(t.caption)
    assert color is not None and shape is not None


def test_synth_scene_deterministic():
    a, b = dataprep.synth_scene(11), dataprep.synth_scene(11)
    np.testing.assert_array_equal(a.original, b.original)
    assert a.caption == b.caption


def test_synth_scene_rejects_tiny_canvas():
    with pytest.raises(dataprep.DataprepError, match="too small"):
        dataprep.synth_scene(0, dataprep.SceneParams(6, 6))


def test_synth_scene_object_sits_on_structure():
    # The bottom row of the object must be close to where the perch/ground starts.
    for seed in range(20):
        t = dataprep.synth_scene(seed, dataprep.SceneParams(64, 64, noise=0.0))
        rows = np.flatnonzero(t.mask.any(axis=1))
        assert rows[-1] >= 0.4 * 64 - 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([32, 48, 64]))
def test_synth_scene_properties(seed, size):
    t = dataprep.synth_scene(seed, dataprep.SceneParams(size, size))
    imaging.check_image(t.original)
    imaging.check_image(t.background)
    assert t.mask.sum() >= 3
    x0, y0, x1, y1 = t.oracle_box
    assert 0 <= x0 < x1 <= 1 and 0 <= y0 < y1 <= 1


def test_build_and_load_dataset(tmp_path):
    src = dataprep.SyntheticSource(8, dataprep.SceneParams(32, 32), seed=2)
    rows = dataprep.build_dataset(src, tmp_path, n_test=3)
    assert [r.split for r in rows] == ["train"] * 5 + ["test"] * 3
    test = dataprep.load_dataset(tmp_path, "test")
    assert len(test) == 3
    expected = list(src)[5:]
    for (row, t), (sid, ref) in zip(test, expected):
        assert row.id == sid
        assert t.caption == ref.caption
        np.testing.assert_array_equal(t.mask, ref.mask)
        np.testing.assert_array_equal(t.original, imaging.quantize(ref.original))
        assert row.oracle_box == pytest.approx(ref.oracle_box)


def test_build_dataset_default_split_fraction(tmp_path):
    rows = dataprep.build_dataset(dataprep.SyntheticSource(20, seed=0), tmp_path)
    assert sum(r.split == "test" for r in rows) == int(20 * 2933 / 11788)


def test_build_dataset_empty_raises(tmp_path):
    with pytest.raises(dataprep.DataprepError, match="empty"):
        dataprep.build_dataset([], tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(dataprep.DataprepError, match="manifest"):
        dataprep.read_manifest(tmp_path)


def test_directory_source(tmp_path):
    t = dataprep.synth_scene(1)
    imaging.save_image(tmp_path / "bird1.png", t.original)
    imaging.save_mask(tmp_path / "bird1.mask.png", t.mask)
    (tmp_path / "bird1.txt").write_text("a red ellipse bird\n")
    [(sid, triple)] = list(dataprep.DirectorySource(tmp_path))
    assert sid == "bird1"
    np.testing.assert_array_equal(triple.mask, t.mask)
    assert triple.caption == caption_for("red", "ellipse")


def test_directory_source_needs_mask_or_segmenter(tmp_path):
    imaging.save_image(tmp_path / "x.png", np.zeros((3, 8, 8)))
    (tmp_path / "x.txt").write_text("a bird")
    with pytest.raises(dataprep.DataprepError, match="no mask"):
        list(dataprep.DirectorySource(tmp_path))
