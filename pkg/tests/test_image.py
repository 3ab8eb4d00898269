import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from cycledeblur.image import (ImageError, as_image, denormalize, load_image, luma_plane, normalize,
                               resize_bilinear, save_image, to_bytes, to_luma)

unit_images = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8), st.sampled_from([1, 3])),
                     elements=st.floats(0.0, 1.0))


def _write_png(path, raw, mode):
    PILImage.fromarray(raw, mode=mode).save(path)


def test_load_zero_and_full_range(tmp_path):
    _write_png(tmp_path / "z.png", np.zeros((2, 2, 3), np.uint8), "RGB")
    _write_png(tmp_path / "f.png", np.full((2, 2), 255, np.uint8), "L")
    assert np.all(load_image(tmp_path / "z.png") == 0.0)
    full = load_image(tmp_path / "f.png")
    assert full.shape == (2, 2, 1) and np.all(full == 1.0)


def test_load_byte_128(tmp_path):
    _write_png(tmp_path / "m.png", np.full((1, 1, 3), 128, np.uint8), "RGB")
    assert load_image(tmp_path / "m.png")[0, 0, 0] == 128 / 255


def test_load_errors_name_the_path(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.png"):
        load_image(tmp_path / "nope.png")
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(ImageError, match="bad.png"):
        load_image(bad)


def test_save_rounding_rule():
    raw = to_bytes(np.array([[[0.0, 0.5, 1.0]]]))
    assert raw.tolist() == [[[0, 128, 255]]]
    # exactly halfway between bytes rounds up
    assert to_bytes(np.array([[[2.5 / 255]]]))[0, 0, 0] == 3


def test_save_unwritable(tmp_path):
    with pytest.raises(ImageError):
        save_image(np.zeros((2, 2, 3)), tmp_path / "missing_dir" / "x.png")


@settings(max_examples=30, deadline=None)
@given(unit_images)
def test_save_load_quantization_bound(tmp_path_factory, img):
    path = tmp_path_factory.mktemp("rt") / "x.png"
    save_image(img, path)
    back = load_image(path)
    assert back.shape == img.shape
    assert np.max(np.abs(back - img)) <= 1 / 510 + 1e-12


def test_as_image_validation():
    assert as_image(np.full((2, 2), 1.7)).shape == (2, 2, 1)
    assert as_image(np.full((2, 2), 1.7)).max() == 1.0
    for bad in (np.zeros((2, 2, 2)), np.zeros((0, 2, 3)), np.array([[np.nan]]), np.zeros(4)):
        with pytest.raises(ImageError):
            as_image(bad)


def test_normalize_points():
    assert normalize(0.0) == -1.0 and normalize(1.0) == 1.0 and normalize(0.25) == -0.5


@given(unit_images)
def test_normalize_round_trip(img):
    assert np.max(np.abs(denormalize(normalize(img)) - img)) <= 1e-6


def test_resize_constant_and_identity(rng):
    const = np.full((5, 7, 3), 0.3)
    assert np.allclose(resize_bilinear(const, 11, 2), 0.3, atol=1e-12)
    img = rng.uniform(size=(6, 5, 3))
    assert np.array_equal(resize_bilinear(img, 6, 5), img)


def test_resize_half_pixel_values():
    # 2x2 [[0,1],[0,1]] -> 1x2: rows collapse, columns keep their own centres
    out = resize_bilinear(np.array([[0.0, 1.0], [0.0, 1.0]]), 1, 2)
    assert np.allclose(out[:, :, 0], [[0.0, 1.0]])
    # 2 -> 4 samples sit at source coordinates -0.25, 0.25, 0.75, 1.25 (edges clamped)
    out = resize_bilinear(np.array([[0.0, 1.0]]), 1, 4)
    assert np.allclose(out[0, :, 0], [0.0, 0.25, 0.75, 1.0])
    # 4 -> 2 box-like averages of neighbouring pairs
    out = resize_bilinear(np.array([[0.0, 1.0, 2.0, 3.0]]) / 3, 1, 2)
    assert np.allclose(out[0, :, 0], np.array([0.5, 2.5]) / 3)


def test_resize_matches_pil_on_upsampling(rng):
    # PIL's bilinear uses the same half-pixel convention when enlarging
    img = rng.uniform(size=(5, 6)).astype(np.float32)
    pil = np.asarray(PILImage.fromarray(img, mode="F").resize((12, 10), PILImage.BILINEAR))
    ours = resize_bilinear(img.astype(np.float64), 10, 12)[:, :, 0]
    assert np.max(np.abs(ours - pil)) < 1e-5


def test_resize_rejects_empty_target():
    with pytest.raises(ImageError):
        resize_bilinear(np.zeros((2, 2, 3)), 0, 3)


def test_luma():
    assert to_luma(np.ones((1, 1, 3)))[0, 0, 0] == pytest.approx(1.0)
    assert to_luma(np.array([[[1.0, 0.0, 0.0]]]))[0, 0, 0] == pytest.approx(0.299)
    assert to_luma(np.full((1, 1, 3), 0.42))[0, 0, 0] == pytest.approx(0.42)
    with pytest.raises(ImageError):
        to_luma(np.zeros((2, 2, 1)))
    assert luma_plane(np.zeros((3, 4, 1))).shape == (3, 4)


@given(arrays(np.float64, (4, 4, 3), elements=st.floats(0.0, 1.0)))
def test_luma_stays_in_range(img):
    y = to_luma(img)
    assert y.min() >= -1e-12 and y.max() <= 1 + 1e-12
