"""Degradation operators against scalar oracles, Monte Carlo checks and invariants."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advtrain import degrade as dg
from advtrain.seeding import stream
from oracles import bicubic_scalar, blur_dense


@pytest.fixture
def image(rng):
    return rng.uniform(0, 255, size=(16, 16))


class TestBicubic:
    def test_same_size_identity(self, image):
        np.testing.assert_array_equal(dg.bicubic_resize(image, 16, 16), image)

    @pytest.mark.parametrize("shape", [(4, 4), (7, 5), (32, 20)])
    def test_constant_preserved(self, shape):
        out = dg.bicubic_resize(np.full((16, 16), 93.0), *shape)
        np.testing.assert_allclose(out, 93.0, atol=1e-9)

    def test_ramp_downsize_matches_oracle(self):
        ramp = np.tile(np.arange(8) * 30.0, (8, 1))
        np.testing.assert_allclose(dg.bicubic_resize(ramp, 4, 4), bicubic_scalar(ramp, 4, 4), atol=1e-9)

    @pytest.mark.parametrize("shape", [(5, 11), (24, 24), (3, 16)])
    def test_random_matches_oracle(self, image, shape):
        np.testing.assert_allclose(
            dg.bicubic_resize(image, *shape, clamp=False), bicubic_scalar(image, *shape, clamp=False), atol=1e-9
        )

    def test_keys_kernel_values(self):
        # a = -0.5: k(0)=1, k(1)=k(2)=0, k(0.5)=0.5625, k(1.5)=-0.0625
        np.testing.assert_allclose(dg.keys_cubic(np.array([0, 0.5, 1, 1.5, 2, 3])), [1, 0.5625, 0, -0.0625, 0, 0])

    def test_zero_target_rejected(self, image):
        with pytest.raises(ValueError):
            dg.bicubic_resize(image, 0, 4)


class TestLowRes:
    def test_factor_one_identity(self, image):
        np.testing.assert_array_equal(dg.degrade_lowres(image, 1), image)

    def test_constant_unchanged(self):
        np.testing.assert_allclose(dg.degrade_lowres(np.full((32, 32), 200.0), 4), 200.0, atol=1e-9)

    def test_checkerboard_matches_oracle_composition(self):
        board = (np.indices((32, 32)).sum(axis=0) % 2) * 255.0
        expected = bicubic_scalar(bicubic_scalar(board, 16, 16), 32, 32)
        np.testing.assert_allclose(dg.degrade_lowres(board, 2), expected, atol=1e-9)

    def test_non_divisible_uses_floor(self, rng):
        img = rng.uniform(0, 255, size=(10, 10))
        expected = bicubic_scalar(bicubic_scalar(img, 3, 3), 10, 10)
        np.testing.assert_allclose(dg.degrade_lowres(img, 3), expected, atol=1e-9)

    def test_factor_too_large(self, image):
        with pytest.raises(ValueError):
            dg.degrade_lowres(image, 17)


class TestBlur:
    def test_kernel_normalized(self):
        for std, k in ((2.0, 9), (0.7, 3), (5.0, 15)):
            assert abs(dg.make_gaussian_kernel(std, k).sum() - 1) < 1e-12

    def test_constant_unchanged(self):
        np.testing.assert_allclose(dg.degrade_gaussian_blur(np.full((16, 16), 41.0), 2.0, 9), 41.0, atol=1e-9)

    @pytest.mark.parametrize("std,k", [(2.0, 9), (1.0, 5), (3.0, 7)])
    def test_matches_dense_oracle(self, image, std, k):
        np.testing.assert_allclose(
            dg.degrade_gaussian_blur(image, std, k, clamp=False), blur_dense(image, std, k), atol=1e-10
        )

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            dg.make_gaussian_kernel(2.0, 8)


class TestGaussianNoise:
    def test_zero_std_identity(self, image, rng):
        np.testing.assert_array_equal(dg.degrade_gaussian_noise(image, 0, rng), image)

    def test_moments_on_mid_gray(self):
        gray = np.full((100_000,), 128.0)
        diff = dg.degrade_gaussian_noise(gray, 25.0, np.random.default_rng(3)) - gray
        # at +-5 std from 128 the clamp is essentially never hit
        assert abs(diff.mean()) < 0.5
        assert abs(diff.std() - 25.0) < 0.02 * 25.0

    def test_clamped(self, rng):
        out = dg.degrade_gaussian_noise(np.full((64, 64), 250.0), 50.0, rng)
        assert out.min() >= 0 and out.max() <= 255


class TestSaltPepper:
    def test_fraction_zero_identity(self, image, rng):
        np.testing.assert_array_equal(dg.degrade_salt_pepper(image, 0.0, rng), image)

    def test_fraction_one_all_extreme(self, image, rng):
        out = dg.degrade_salt_pepper(image, 1.0, rng)
        assert np.isin(out, [0.0, 255.0]).all()

    def test_exact_count(self, rng):
        img = np.full((32, 32), 100.0)
        out = dg.degrade_salt_pepper(img, 0.5, rng)
        assert (out != 100.0).sum() == 512

    def test_untouched_pixels_bit_identical(self, rng):
        img = rng.uniform(1, 254, size=(20, 20))
        out = dg.degrade_salt_pepper(img, 0.3, rng)
        changed = out != img
        assert changed.sum() == 120
        np.testing.assert_array_equal(out[~changed], img[~changed])

    def test_both_values_about_equally_likely(self):
        out = dg.degrade_salt_pepper(np.full((200, 200), 100.0), 0.5, np.random.default_rng(5))
        salt = (out == 255).sum() / 20_000
        assert abs(salt - 0.5) < 0.02

    def test_count_rounding_guard(self):
        assert dg.salt_pepper_count(0.29, 100) == 29

    def test_color_positions_shared_across_channels(self, rng):
        img = np.full((3, 8, 8), 100.0)
        out = dg.degrade_salt_pepper(img, 0.25, rng)
        hit = out[0] != 100
        assert hit.sum() == 16
        for ch in out:
            np.testing.assert_array_equal(ch != 100, hit)


class TestOcclusion:
    box = (8.0, 4.0, 16.0, 28.0)

    def test_single_fill_value(self, rng):
        img = np.full((32, 32), -1.0)  # sentinel outside the fill range
        out = dg.degrade_occlude(img, self.box, rng)
        covered = out != -1.0
        assert covered.any()
        assert len(np.unique(out[covered])) == 1

    def test_center_inside_box(self, rng):
        for _ in range(200):
            occ = dg.sample_occluder(self.box, rng)
            assert 8 <= occ.cy <= 16 and 4 <= occ.cx <= 28
            assert 0.25 * 8 <= occ.height <= 0.6 * 8

    def test_rectangle_frequency(self):
        r = np.random.default_rng(11)
        rects = sum(dg.sample_occluder(self.box, r).shape == "rect" for _ in range(10_000))
        assert 0.49 <= rects / 10_000 <= 0.51

    def test_box_outside_image(self, rng):
        with pytest.raises(ValueError):
            dg.degrade_occlude(np.zeros((16, 16)), (0, 0, 20, 8), rng)


class TestMixed:
    def test_single_element_equals_operator(self, image):
        a = dg.degrade_mixed(image, [dg.GaussianNoise(10)], np.random.default_rng(2))
        b = dg.GaussianNoise(10).apply(image, np.random.default_rng(2))
        np.testing.assert_array_equal(a, b)

    def test_identity_chain(self, image, rng):
        np.testing.assert_array_equal(dg.degrade_mixed(image, [dg.LowRes(1), dg.GaussianNoise(0)], rng), image)

    def test_lowres_then_blur_manual(self, image, rng):
        out = dg.degrade_mixed(image, [dg.LowRes(2), dg.GaussianBlur(2.0)], rng)
        np.testing.assert_array_equal(out, dg.degrade_gaussian_blur(dg.degrade_lowres(image, 2), 2.0, 9))

    def test_lowres_then_noise_shares_stream(self, image):
        out = dg.parse_spec("lowres:2|gauss-noise:25").apply(image, np.random.default_rng(9))
        manual = dg.degrade_gaussian_noise(dg.degrade_lowres(image, 2), 25, np.random.default_rng(9))
        np.testing.assert_array_equal(out, manual)

    def test_empty_rejected(self, rng):
        with pytest.raises(ValueError):
            dg.degrade_mixed(np.zeros((4, 4)), [], rng)


class TestSpecs:
    @pytest.mark.parametrize(
        "text", ["lowres:2", "salt-pepper:0.5", "blur:2,9", "gauss-noise:25", "occlude:0.2,0.15,0.5,0.85,0.25,0.6",
                 "lowres:2|gauss-noise:25"],
    )
    def test_round_trip(self, text):
        assert dg.parse_spec(dg.parse_spec(text).to_string()) == dg.parse_spec(text)

    def test_taxonomy(self):
        assert dg.LowRes(2).category == dg.GaussianBlur().category == dg.CONVOLUTIONAL
        assert dg.SaltPepper().category == dg.GaussianNoise().category == dg.Occlusion().category == dg.ADDITIVE

    def test_with_factor_on_chain_targets_resolution(self):
        spec = dg.parse_spec("lowres:2|gauss-noise:25").with_factor(4)
        assert spec.to_string() == "lowres:4|gauss-noise:25"

    def test_unknown_name(self):
        with pytest.raises(ValueError, match="unknown"):
            dg.parse_spec("sharpen:2")

    def test_dataset_order_independent(self, rng):
        imgs = rng.uniform(0, 255, size=(6, 1, 8, 8))
        full = dg.degrade_dataset(imgs, dg.SaltPepper(0.5), seed=3)
        # image 4 alone, drawn from its own stream, matches its slot in the full run
        alone = dg.SaltPepper(0.5).apply(imgs[4], stream(3, "degrade", "train", 4))
        np.testing.assert_array_equal(full[4], alone)

    def test_dataset_reproducible(self, rng):
        imgs = rng.uniform(0, 255, size=(4, 1, 8, 8))
        spec = dg.parse_spec("lowres:2|gauss-noise:25")
        np.testing.assert_array_equal(dg.degrade_dataset(imgs, spec, 1), dg.degrade_dataset(imgs, spec, 1))
        assert not np.array_equal(dg.degrade_dataset(imgs, spec, 1), dg.degrade_dataset(imgs, spec, 2))


SPECS = [dg.LowRes(2), dg.LowRes(3), dg.GaussianBlur(1.5, 5), dg.GaussianNoise(30), dg.SaltPepper(0.4),
         dg.Occlusion(), dg.parse_spec("lowres:2|gauss-noise:25")]


@settings(max_examples=30, deadline=None)
@given(idx=st.integers(0, len(SPECS) - 1), h=st.integers(8, 20), w=st.integers(8, 20), seed=st.integers(0, 2**31))
def test_shape_and_range_preserved(idx, h, w, seed):
    r = np.random.default_rng(seed)
    img = r.uniform(0, 255, size=(h, w))
    out = SPECS[idx].apply(img, r)
    assert out.shape == img.shape
    assert out.min() >= 0 and out.max() <= 255


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-100, 100), seed=st.integers(0, 2**31), which=st.sampled_from(["lowres", "blur"]))
def test_convolutional_ops_commute_with_constant(c, seed, which):
    img = np.random.default_rng(seed).uniform(0, 255, size=(12, 12))
    if which == "lowres":
        op = lambda x: dg.degrade_lowres(x, 2, clamp=False)
    else:
        op = lambda x: dg.degrade_gaussian_blur(x, 2.0, 9, clamp=False)
    np.testing.assert_allclose(op(img + c), op(img) + c, atol=1e-9)


@settings(max_examples=20, deadline=None)
@given(frac=st.floats(0, 1), h=st.integers(1, 24), w=st.integers(1, 24), seed=st.integers(0, 2**31))
def test_salt_pepper_count_property(frac, h, w, seed):
    img = np.full((h, w), 77.0)
    out = dg.degrade_salt_pepper(img, frac, np.random.default_rng(seed))
    assert (out != 77.0).sum() == dg.salt_pepper_count(frac, h * w)
