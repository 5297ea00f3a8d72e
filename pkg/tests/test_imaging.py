import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from objood.imaging import (
    BoundingBox,
    MalformedRegionError,
    as_image,
    blur_region,
    crop_with_margin,
    default_stroke,
    draw_box,
    expand_box,
    gaussian_blur,
    gaussian_kernel,
    round_half_away,
    to_grayscale,
)

from oracles import dense_blur, perimeter_pixels, pixel_copy


def rand_image(rng, h, w):
    return rng.random((h, w, 3))


@st.composite
def image_and_box(draw, max_side=24):
    h = draw(st.integers(1, max_side))
    w = draw(st.integers(1, max_side))
    x0 = draw(st.integers(0, w - 1))
    y0 = draw(st.integers(0, h - 1))
    x1 = draw(st.integers(x0 + 1, w))
    y1 = draw(st.integers(y0 + 1, h))
    seed = draw(st.integers(0, 2**32 - 1))
    return rand_image(np.random.default_rng(seed), h, w), BoundingBox(x0, y0, x1, y1)


class TestBoundingBox:
    def test_round_half_away(self):
        assert [round_half_away(v) for v in (2.5, -2.5, 2.49, 0.5, -0.5, 3.0)] == [3, -3, 2, 1, -1, 3]

    def test_from_xywh(self):
        assert BoundingBox.from_xywh(10.0, 20.0, 30.0, 40.0) == BoundingBox(10, 20, 40, 60)

    def test_clamp(self):
        assert BoundingBox.from_xywh(95.0, 95.0, 20.0, 20.0).clamp(100, 100) == BoundingBox(95, 95, 100, 100)

    @pytest.mark.parametrize("box", [BoundingBox(3, 3, 3, 5), BoundingBox(0, 0, 11, 4), BoundingBox(-1, 0, 4, 4)])
    def test_invalid(self, box):
        with pytest.raises(MalformedRegionError):
            box.validate(10, 10)


class TestCrop:
    def test_whole_image_identity(self):
        img = rand_image(np.random.default_rng(0), 7, 9)
        np.testing.assert_array_equal(crop_with_margin(img, BoundingBox(0, 0, 9, 7), 1.0), img)

    def test_tight_crop(self):
        img = rand_image(np.random.default_rng(1), 10, 10)
        out = crop_with_margin(img, BoundingBox(2, 2, 6, 6), 1.0)
        assert out.shape == (4, 4, 3)
        np.testing.assert_array_equal(out, img[2:6, 2:6])

    def test_margin_against_pixel_copy(self):
        img = rand_image(np.random.default_rng(2), 10, 10)
        assert expand_box(BoundingBox(2, 2, 6, 6), 1.5, 10, 10) == BoundingBox(1, 1, 7, 7)
        out = crop_with_margin(img, BoundingBox(2, 2, 6, 6), 1.5)
        assert out.shape == (6, 6, 3)
        np.testing.assert_array_equal(out, pixel_copy(img, 1, 1, 7, 7))

    def test_margin_clipped_at_border(self):
        img = rand_image(np.random.default_rng(3), 10, 10)
        out = crop_with_margin(img, BoundingBox(0, 0, 4, 4), 2.0)
        np.testing.assert_array_equal(out, img[0:6, 0:6])

    def test_degenerate_box_rejected(self):
        with pytest.raises(MalformedRegionError):
            crop_with_margin(np.zeros((5, 5, 3)), BoundingBox(2, 2, 2, 4))

    def test_bad_margin(self):
        with pytest.raises(ValueError):
            crop_with_margin(np.zeros((5, 5, 3)), BoundingBox(0, 0, 2, 2), 0.5)

    @given(image_and_box())
    @settings(max_examples=50, deadline=None)
    def test_tight_crop_idempotent(self, ib):
        img, box = ib
        once = crop_with_margin(img, box, 1.0)
        twice = crop_with_margin(once, BoundingBox(0, 0, once.shape[1], once.shape[0]), 1.0)
        np.testing.assert_array_equal(once, twice)


class TestGaussianBlur:
    def test_kernel(self):
        k = gaussian_kernel(2.0)
        assert len(k) == 13
        assert abs(k.sum() - 1.0) < 1e-15
        np.testing.assert_array_equal(k, k[::-1])

    @pytest.mark.parametrize("sigma", [0.5, 2.0, 3.7])
    def test_constant_image(self, sigma):
        img = np.full((9, 11, 3), 0.37)
        np.testing.assert_allclose(gaussian_blur(img, sigma), img, atol=1e-6)

    def test_impulse_sums_to_value(self):
        img = np.zeros((41, 41, 3))
        img[20, 20] = 0.8
        out = gaussian_blur(img, 2.0)
        np.testing.assert_allclose(out.sum(axis=(0, 1)), 0.8, atol=1e-5)

    def test_row_matches_dense_oracle(self):
        img = np.zeros((1, 7, 3))
        img[0, 3] = 1.0
        out = gaussian_blur(img, 2.0)
        np.testing.assert_allclose(out, dense_blur(img, 2.0), atol=1e-6)
        # frozen from the dense oracle
        expected = [0.06482518513852684, 0.12110939007484814, 0.17621312278855084, 0.19967562749792112,
                    0.17621312278855084, 0.12110939007484814, 0.06482518513852684]
        np.testing.assert_allclose(out[0, :, 0], expected, atol=1e-12)

    def test_random_against_dense(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            img = rand_image(rng, int(rng.integers(1, 9)), int(rng.integers(1, 9)))
            sigma = float(rng.uniform(0.3, 2.5))
            np.testing.assert_allclose(gaussian_blur(img, sigma), dense_blur(img, sigma), atol=1e-6)

    def test_mean_preserved_interior(self):
        img = np.zeros((64, 64, 3))
        rng = np.random.default_rng(5)
        img[16:48, 16:48] = rng.random((32, 32, 3))
        assert abs(gaussian_blur(img, 2.0).mean() - img.mean()) < 1e-4

    @pytest.mark.parametrize("sigma", [0.0, -1.0, float("nan")])
    def test_bad_sigma(self, sigma):
        with pytest.raises(ValueError):
            gaussian_blur(np.zeros((3, 3, 3)), sigma)

    @given(image_and_box(max_side=16), st.floats(0.3, 4.0))
    @settings(max_examples=40, deadline=None)
    def test_range_and_purity(self, ib, sigma):
        img, _ = ib
        before = img.copy()
        out = gaussian_blur(img, sigma)
        assert out.min() >= 0.0 and out.max() <= 1.0
        np.testing.assert_array_equal(img, before)
        np.testing.assert_array_equal(out, gaussian_blur(img, sigma))


class TestBlurRegion:
    def test_outside_whole_image_is_identity(self):
        img = rand_image(np.random.default_rng(6), 8, 8)
        np.testing.assert_array_equal(blur_region(img, BoundingBox(0, 0, 8, 8), "outside", 2.0), img)

    def test_inside_whole_image_is_full_blur(self):
        img = rand_image(np.random.default_rng(7), 8, 8)
        np.testing.assert_array_equal(blur_region(img, BoundingBox(0, 0, 8, 8), "inside", 2.0), gaussian_blur(img, 2.0))

    def test_half_white_outside_mask(self):
        img = np.zeros((10, 10, 3))
        img[:, 5:] = 1.0
        box = BoundingBox(5, 0, 10, 10)
        out = blur_region(img, box, "outside", 2.0)
        full = gaussian_blur(img, 2.0)
        mask = np.zeros((10, 10), bool)
        mask[0:10, 5:10] = True
        np.testing.assert_array_equal(out[mask], img[mask])
        np.testing.assert_array_equal(out[~mask], full[~mask])
        assert out[:, 4].min() > 0.0  # light bleeds into the dark half

    @given(image_and_box(max_side=16), st.sampled_from(["inside", "outside"]))
    @settings(max_examples=50, deadline=None)
    def test_untouched_region_bit_exact(self, ib, mode):
        img, box = ib
        out = blur_region(img, box, mode, 2.0)
        inside = np.zeros(img.shape[:2], bool)
        inside[box.y_min:box.y_max, box.x_min:box.x_max] = True
        untouched = ~inside if mode == "inside" else inside
        np.testing.assert_array_equal(out[untouched], img[untouched])
        assert 0.0 <= out.min() and out.max() <= 1.0

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            blur_region(np.zeros((4, 4, 3)), BoundingBox(0, 0, 2, 2), "around", 1.0)


class TestDrawBox:
    def test_perimeter_enumeration(self):
        img = np.ones((10, 10, 3))
        out = draw_box(img, BoundingBox(2, 2, 8, 8), (1.0, 0.0, 0.0), 1)
        expected = perimeter_pixels(2, 2, 8, 8, 1)
        assert len(expected) == 20
        red = {(x, y) for y in range(10) for x in range(10) if tuple(out[y, x]) == (1.0, 0.0, 0.0)}
        white = {(x, y) for y in range(10) for x in range(10) if tuple(out[y, x]) == (1.0, 1.0, 1.0)}
        assert red == expected
        assert len(white) == 80

    def test_saturated_frame(self):
        img = np.zeros((10, 10, 3))
        out = draw_box(img, BoundingBox(2, 2, 8, 8), (0.0, 1.0, 0.0), 3)
        assert np.all(out[2:8, 2:8] == (0.0, 1.0, 0.0))
        assert np.all(out[:2] == 0) and np.all(out[8:] == 0)

    def test_idempotent(self):
        img = rand_image(np.random.default_rng(8), 12, 12)
        box = BoundingBox(1, 2, 11, 9)
        once = draw_box(img, box, (1, 0, 0), 2)
        np.testing.assert_array_equal(draw_box(once, box, (1, 0, 0), 2), once)

    def test_stroke_too_wide(self):
        with pytest.raises(MalformedRegionError):
            draw_box(np.zeros((10, 10, 3)), BoundingBox(0, 0, 5, 5), width=3)

    def test_default_stroke(self):
        assert default_stroke(100, 100) == 2
        assert default_stroke(640, 480) == 5
        assert default_stroke(1920, 1080) == 11


def test_grayscale_luma():
    img = np.zeros((1, 3, 3))
    img[0, 0] = (1, 0, 0)
    img[0, 1] = (0, 1, 0)
    img[0, 2] = (0, 0, 1)
    out = to_grayscale(img)
    np.testing.assert_allclose(out[0, :, 0], [0.299, 0.587, 0.114])
    np.testing.assert_array_equal(out[..., 0], out[..., 2])


def test_as_image_validation():
    with pytest.raises(ValueError):
        as_image(np.zeros((4, 4)))
    with pytest.raises(ValueError):
        as_image(np.full((2, 2, 3), 1.5))
    assert as_image([[[0, 0.5, 1]]]).shape == (1, 1, 3)
