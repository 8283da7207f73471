import colorsys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from didark.errors import ArgumentError, DomainError
from didark.imagecore import (
    Domain,
    Image,
    center_crop,
    hsv_to_rgb,
    linear_to_srgb,
    lowpass_array,
    patchify,
    read_png,
    resample,
    resample_array,
    resample_matrix,
    rgb_to_hsv,
    srgb_to_linear,
    stitch,
    write_png,
)


def srgb_oracle(c):
    # piecewise IEC 61966-2-1 decode, evaluated one scalar at a time
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


def gray(value, size=4):
    return Image(np.full((size, size, 3), value))


class TestImage:
    def test_clamps_on_construction(self):
        img = Image(np.array([[[-0.5, 0.5, 1.5]]]))
        assert img.data.tolist() == [[[0.0, 0.5, 1.0]]]
        norm = Image(np.array([[[-2.0, 0.0, 2.0]]]), Domain.NORMALIZED)
        assert norm.data.tolist() == [[[-1.0, 0.0, 1.0]]]

    def test_rejects_bad_shape(self):
        with pytest.raises(ArgumentError):
            Image(np.zeros((4, 4)))
        with pytest.raises(ArgumentError):
            Image(np.zeros((0, 4, 3)))

    def test_data_is_read_only(self):
        img = gray(0.5)
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0


class TestSrgb:
    @pytest.mark.parametrize("value", [0.0, 1.0])
    def test_fixed_points(self, value):
        assert srgb_to_linear(gray(value)).data[0, 0, 0] == value

    def test_mid_gray(self):
        out = srgb_to_linear(gray(0.5)).data[0, 0, 0]
        assert out == pytest.approx(srgb_oracle(0.5), abs=1e-12)
        assert out == pytest.approx(0.2140, abs=1e-4)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        data = rng.random((8, 8, 3))
        out = srgb_to_linear(Image(data)).data
        expected = np.vectorize(srgb_oracle)(data)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_round_trip(self):
        data = np.random.default_rng(2).random((16, 16, 3))
        back = linear_to_srgb(srgb_to_linear(Image(data))).data
        np.testing.assert_allclose(back, data, atol=1e-6)

    def test_domain_checked(self):
        with pytest.raises(DomainError):
            srgb_to_linear(Image(np.zeros((2, 2, 3)), Domain.LINEAR))
        with pytest.raises(DomainError):
            linear_to_srgb(gray(0.2))


class TestHsv:
    def test_gray_has_zero_saturation(self):
        hsv = rgb_to_hsv(gray(0.3)).data
        assert np.all(hsv[..., 1] == 0)
        np.testing.assert_allclose(hsv[..., 2], 0.3)

    def test_primary_red(self):
        hsv = rgb_to_hsv(Image(np.array([[[1.0, 0.0, 0.0]]]))).data[0, 0]
        assert hsv.tolist() == [0.0, 1.0, 1.0]

    def test_matches_colorsys(self):
        data = np.random.default_rng(3).random((5, 5, 3))
        hsv = rgb_to_hsv(Image(data)).data
        expected = np.array([[colorsys.rgb_to_hsv(*px) for px in row] for row in data])
        np.testing.assert_allclose(hsv, expected, atol=1e-12)

    def test_round_trip(self):
        data = np.random.default_rng(4).random((32, 32, 3))
        back = hsv_to_rgb(rgb_to_hsv(Image(data))).data
        np.testing.assert_allclose(back, data, atol=1e-6)

    def test_domain_checked(self):
        with pytest.raises(DomainError):
            rgb_to_hsv(Image(np.zeros((2, 2, 3)), Domain.LINEAR))
        with pytest.raises(DomainError):
            hsv_to_rgb(gray(0.1))


class TestResample:
    @pytest.mark.parametrize("target,direction", [(1, "down"), (3, "down"), (8, "down"), (13, "up"), (32, "up")])
    def test_constant_preserved(self, target, direction):
        out = resample(gray(0.37, 8), target, direction)
        assert out.shape == (target, target, 3)
        np.testing.assert_allclose(out.data, 0.37, atol=1e-12)

    def test_constant_downsample_exact(self):
        out = resample_array(np.full((12, 12, 3), 0.375), 4, "down")
        assert np.all(out == 0.375)

    def test_box_average(self):
        img = Image(np.array([[0.0, 0.0], [1.0, 1.0]])[..., None].repeat(3, axis=2))
        assert resample(img, 1, "down").data[0, 0, 0] == pytest.approx(0.5)

    def test_block_constant_round_trip_nearest(self):
        # box-down then replicate-up is the identity on 2x2 block-constant images
        blocks = np.random.default_rng(5).random((8, 8, 3))
        img = blocks.repeat(2, axis=0).repeat(2, axis=1)
        back = resample_array(resample_array(img, 8, "down"), 16, "up", method="nearest")
        np.testing.assert_allclose(back, img, atol=1e-6)

    def test_bilinear_up_interior_matches_hand_values(self):
        row = np.array([0.0, 1.0])[None, :, None].repeat(3, axis=2)
        out = resample_array(row, (1, 4), "up")[0, :, 0]
        np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])

    def test_separable_matrix_agrees(self):
        rng = np.random.default_rng(6)
        data = rng.random((12, 20, 3))
        for target, direction in [((5, 7), "down"), ((6, 10), "down"), ((17, 33), "up")]:
            wh = resample_matrix(12, target[0])
            ww = resample_matrix(20, target[1])
            expected = np.einsum("ih,hwc,jw->ijc", wh, data, ww)
            np.testing.assert_allclose(resample_array(data, target, direction), expected, atol=1e-12)

    def test_matrix_rows_sum_to_one(self):
        for n_in, n_out in [(10, 3), (9, 3), (4, 11), (7, 7)]:
            np.testing.assert_allclose(resample_matrix(n_in, n_out).sum(axis=1), 1.0)

    @settings(max_examples=30, deadline=None)
    @given(
        a=st.floats(-3, 3), b=st.floats(-3, 3),
        x=arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1)),
        y=arrays(np.float64, (12, 12, 3), elements=st.floats(0, 1)),
        target=st.sampled_from([(5, "down"), (6, "down"), (18, "up"), (24, "up")]),
    )
    def test_linearity(self, a, b, x, y, target):
        k, d = target
        lhs = resample_array(a * x + b * y, k, d)
        rhs = a * resample_array(x, k, d) + b * resample_array(y, k, d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_direction_errors(self):
        img = gray(0.5, 8)
        with pytest.raises(ArgumentError):
            resample(img, 16, "down")
        with pytest.raises(ArgumentError):
            resample(img, 4, "up")
        with pytest.raises(ArgumentError):
            resample(img, 4, "sideways")
        with pytest.raises(ArgumentError):
            resample(img, 0, "down")

    def test_lowpass_idempotent(self):
        x = np.random.default_rng(7).standard_normal((32, 32, 3))
        once = lowpass_array(x)
        np.testing.assert_allclose(lowpass_array(once), once, atol=1e-12)


class TestCenterCrop:
    def test_identity(self):
        img = Image(np.random.default_rng(0).random((256, 256, 3)))
        assert np.array_equal(center_crop(img, 256).data, img.data)

    @pytest.mark.parametrize("h,w,origin", [(260, 260, (2, 2)), (300, 400, (22, 72)), (257, 259, (0, 1))])
    def test_origin(self, h, w, origin):
        data = np.random.default_rng(1).random((h, w, 3))
        out = center_crop(Image(data), 256).data
        r, c = origin
        assert np.array_equal(out, data[r:r + 256, c:c + 256])

    def test_too_large(self):
        with pytest.raises(ArgumentError):
            center_crop(gray(0.5, 100), 256)


class TestPatchGrid:
    def test_single_patch(self):
        grid = patchify(gray(0.2, 32))
        assert len(grid) == 1 and grid.rows == grid.cols == 1

    def test_full_resolution_grid(self):
        grid = patchify(Image(np.zeros((256, 256, 3))))
        assert len(grid) == 64 and grid.rows == grid.cols == 8
        assert grid.origins[9] == (32, 32)

    def test_row_major_order(self):
        data = np.zeros((64, 96, 3))
        data[0:32, 32:64] = 1.0
        grid = patchify(Image(data))
        assert grid.rows == 2 and grid.cols == 3
        assert grid.patches[1].min() == 1.0
        assert grid.patches[[0, 2, 3, 4, 5]].max() == 0.0

    def test_round_trip_exact(self):
        data = np.random.default_rng(2).random((128, 128, 3))
        assert np.array_equal(stitch(patchify(Image(data))).data, data)

    def test_multichannel_arrays(self):
        data = np.random.default_rng(3).random((64, 64, 9))
        grid = patchify(data)
        assert grid.patches.shape == (4, 32, 32, 9)
        assert np.array_equal(stitch(grid), data)

    def test_indivisible(self):
        with pytest.raises(ArgumentError):
            patchify(gray(0.5, 48))

    def test_incomplete_grid(self):
        grid = patchify(gray(0.5, 64))
        grid.patches = grid.patches[:3]
        with pytest.raises(ArgumentError):
            stitch(grid)


class TestPng:
    @pytest.mark.parametrize("bits", [8, 16])
    def test_round_trip(self, tmp_path, bits):
        data = np.random.default_rng(4).random((10, 12, 3))
        write_png(Image(data), tmp_path / "a.png", bits=bits)
        back = read_png(tmp_path / "a.png")
        assert back.domain == Domain.SRGB
        np.testing.assert_allclose(back.data, data, atol=0.5 / (2**bits - 1) + 1e-12)

    def test_channel_order(self, tmp_path):
        data = np.zeros((2, 2, 3))
        data[..., 0] = 1.0
        write_png(Image(data), tmp_path / "red.png")
        assert read_png(tmp_path / "red.png").data[0, 0].tolist() == [1.0, 0.0, 0.0]

    def test_only_srgb(self, tmp_path):
        with pytest.raises(DomainError):
            write_png(Image(np.zeros((2, 2, 3)), Domain.LINEAR), tmp_path / "x.png")
