import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualcloak import BlurParams, gaussian_blur, load_image, save_image
from dualcloak.errors import ImageFormatError, ParameterError
from dualcloak.imaging import (
    clamp01,
    gaussian_kernel1d,
    image_from_png_bytes,
    image_to_png_bytes,
    resize_bilinear,
    resize_bilinear_adjoint,
    validate_image,
)
from conftest import margin_image


class TestValidateImage:
    def test_passthrough(self):
        img = margin_image()
        out = validate_image(img)
        assert out.dtype == np.float64
        np.testing.assert_array_equal(out, img)

    def test_grayscale_channel_ok(self):
        validate_image(np.zeros((4, 4, 1)))

    @pytest.mark.parametrize("bad", [
        np.zeros((4, 4)),            # missing channel axis
        np.zeros((4, 4, 2)),         # unsupported channel count
        np.zeros((0, 4, 3)),         # empty
        np.full((4, 4, 3), 1.5),     # out of range
        np.full((4, 4, 3), np.nan),  # non-finite
    ])
    def test_rejects(self, bad):
        with pytest.raises(ParameterError):
            validate_image(bad)


def test_clamp01():
    x = np.array([[[-0.5, 0.5, 1.5]]])
    np.testing.assert_array_equal(clamp01(x), [[[0.0, 0.5, 1.0]]])


class TestPng:
    def test_round_trip_is_quantization(self, tmp_path):
        img = margin_image(seed=3)
        p = tmp_path / "a.png"
        save_image(img, p)
        back = load_image(p)
        np.testing.assert_array_equal(back, np.round(img * 255) / 255)

    def test_second_round_trip_exact(self, tmp_path):
        # Once quantized, a save/load cycle is the identity.
        img = np.round(margin_image(seed=4) * 255) / 255
        p = tmp_path / "b.png"
        save_image(img, p)
        np.testing.assert_array_equal(load_image(p), img)

    def test_bytes_round_trip(self):
        img = np.round(margin_image(seed=5) * 255) / 255
        np.testing.assert_array_equal(image_from_png_bytes(image_to_png_bytes(img)), img)

    def test_grayscale_file_loads_single_channel(self, tmp_path):
        img = np.round(margin_image((8, 8, 1), seed=6) * 255) / 255
        p = tmp_path / "g.png"
        save_image(img, p)
        back = load_image(p)
        assert back.shape == (8, 8, 1)
        np.testing.assert_array_equal(back, img)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")

    def test_garbage_bytes(self):
        with pytest.raises(ImageFormatError):
            image_from_png_bytes(b"not a png")


class TestBlur:
    def test_kernel_normalized_and_symmetric(self):
        k = gaussian_kernel1d(19, 5.0)
        assert k.shape == (19,)
        assert abs(k.sum() - 1.0) < 1e-12
        np.testing.assert_allclose(k, k[::-1])

    def test_kernel_matches_direct_formula(self):
        k = gaussian_kernel1d(7, 1.3)
        x = np.arange(7) - 3
        ref = np.exp(-0.5 * (x / 1.3) ** 2)
        ref /= ref.sum()
        np.testing.assert_allclose(k, ref, atol=1e-12)

    def test_constant_image_is_fixed_point(self):
        img = np.full((24, 24, 3), 0.37)
        np.testing.assert_allclose(gaussian_blur(img), img, atol=1e-12)

    def test_linearity(self):
        # No clipping inside the operator, so it must be exactly linear.
        a = margin_image((20, 20, 3), seed=7)
        b = margin_image((20, 20, 3), seed=8)
        lhs = gaussian_blur(0.3 * a + 0.6 * b)
        rhs = 0.3 * gaussian_blur(a) + 0.6 * gaussian_blur(b)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_params_validation(self):
        with pytest.raises(ParameterError):
            BlurParams(kernel_size=4, sigma=1.0)
        with pytest.raises(ParameterError):
            BlurParams(kernel_size=3, sigma=0.0)

    def test_shape_guard(self):
        with pytest.raises(ParameterError):
            gaussian_blur(np.zeros((8, 8)))


class TestResize:
    def test_identity_when_same_size(self):
        img = margin_image((9, 7, 3), seed=9)
        np.testing.assert_array_equal(resize_bilinear(img, (9, 7)), img)

    def test_constant_preserved(self):
        img = np.full((10, 12, 3), 0.41)
        np.testing.assert_allclose(resize_bilinear(img, (5, 17)), 0.41, atol=1e-12)

    def test_range_preserved(self):
        img = margin_image((16, 16, 3), seed=10, lo=0.0, hi=1.0)
        out = resize_bilinear(img, (7, 23))
        assert out.min() >= 0.0 and out.max() <= 1.0

    @given(st.integers(2, 12), st.integers(2, 12), st.integers(2, 12), st.integers(2, 12),
           st.integers(0, 10**6))
    @settings(max_examples=40, deadline=None)
    def test_adjoint_identity(self, h, w, oh, ow, seed):
        # <R x, u> == <x, R^T u> for every shape pair.
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(h, w, 3))
        u = rng.normal(size=(oh, ow, 3))
        rx = resize_bilinear(x, (oh, ow))
        rtu = resize_bilinear_adjoint(u, (h, w))
        assert rx.shape == (oh, ow, 3)
        assert rtu.shape == (h, w, 3)
        np.testing.assert_allclose(np.vdot(rx, u), np.vdot(x, rtu), rtol=1e-12)
