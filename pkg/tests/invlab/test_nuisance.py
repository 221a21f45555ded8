import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.strategies import integers, sampled_from

from invlab.nuisance import (
    ALIASES,
    Family,
    TransformDistribution,
    TransformError,
    TransformRecord,
    apply_record,
    compose_identity,
    dilate,
    erode,
    replace_background,
    rotate,
    sample_background,
    sample_dilation_erosion,
    sample_rotation,
)
from invlab.seeding import Stream, generator


@pytest.fixture
def image() -> np.ndarray:
    return np.random.default_rng(0).integers(0, 256, size=(12, 12, 1)).astype(np.uint8)


class TestRotate:
    @pytest.mark.parametrize("size", [3, 4, 9, 16])
    def test_a_quarter_turn_is_rot90(self, size):
        rng = np.random.default_rng(size)
        x = rng.integers(0, 256, size=(size, size)).astype(np.uint8)
        assert np.array_equal(rotate(x, math.pi / 2), np.rot90(x))

    def test_a_half_turn_flips_both_axes(self, image):
        assert np.array_equal(rotate(image, math.pi), image[::-1, ::-1])

    def test_it_keeps_shape_and_dtype(self, image):
        out = rotate(image, 0.3)
        assert out.shape == image.shape
        assert out.dtype == np.uint8

    def test_it_fills_uncovered_corners_with_zero(self):
        x = np.full((10, 10), 255, np.uint8)
        out = rotate(x, math.pi / 4)
        assert out[0, 0] == 0
        assert out[5, 5] == 255


class TestBackground:
    def test_it_only_raises_dark_pixels(self):
        x = np.array([[0, 50, 150]], np.uint8)
        assert replace_background(x, 80).tolist() == [[80, 80, 150]]

    def test_it_rejects_rgb_images(self):
        with pytest.raises(TransformError):
            replace_background(np.zeros((4, 4, 3), np.uint8), 10)

    def test_it_accepts_single_channel_images(self, image):
        assert np.all(replace_background(image, 100) >= 100)


class TestMorphology:
    @given(sampled_from([1, 2, 3, 4]))
    def test_dilation_is_extensive(self, size):
        x = np.random.default_rng(size).integers(0, 256, size=(10, 10)).astype(np.uint8)
        assert np.all(dilate(x, size) >= x)

    @given(sampled_from([1, 2, 3]))
    def test_erosion_is_anti_extensive(self, size):
        x = np.random.default_rng(size).integers(0, 256, size=(10, 10)).astype(np.uint8)
        assert np.all(erode(x, size) <= x)

    def test_even_windows_start_at_the_output_pixel(self):
        x = np.zeros((4, 4), np.uint8)
        x[2, 2] = 255
        lit = np.argwhere(dilate(x, 2) == 255).tolist()
        assert lit == [[1, 1], [1, 2], [2, 1], [2, 2]]

    def test_odd_windows_are_centered(self):
        x = np.zeros((5, 5), np.uint8)
        x[2, 2] = 255
        assert np.argwhere(dilate(x, 3) == 255).min(axis=0).tolist() == [1, 1]
        assert np.argwhere(dilate(x, 3) == 255).max(axis=0).tolist() == [3, 3]

    def test_erosion_pads_with_white(self):
        x = np.full((4, 4), 200, np.uint8)
        assert np.all(erode(x, 2) == 200)

    def test_size_one_is_the_identity(self, image):
        assert np.array_equal(dilate(image, 1), image)
        assert np.array_equal(erode(image, 1), image)

    def test_it_works_per_channel(self):
        x = np.zeros((4, 4, 3), np.uint8)
        x[1, 1, 0] = 255
        out = dilate(x, 3)
        assert out[..., 0].sum() == 9 * 255
        assert out[..., 1:].sum() == 0


class TestTransformDistribution:
    @pytest.mark.parametrize(
        "name, family",
        [
            ("rot", Family.ROTATION),
            ("bg", Family.BACKGROUND),
            ("dil", Family.DILATION_EROSION),
            ("none", Family.IDENTITY),
        ],
    )
    def test_it_is_built_from_aliases(self, name, family):
        assert TransformDistribution.from_name(name).family is family

    def test_learned_transformations_have_no_alias(self):
        assert "miitn" not in ALIASES
        with pytest.raises(TransformError):
            TransformDistribution.from_name("miitn")

    def test_unknown_names_are_rejected(self):
        with pytest.raises(TransformError):
            TransformDistribution.from_name("shear")

    def test_parameters_default_per_family(self):
        t = TransformDistribution.from_name("bg", high=10)
        assert dict(t.parameters) == {"low": 0, "high": 10}

    def test_dilation_is_drawn_sixty_percent_of_the_time(self):
        t = TransformDistribution.from_name("dil")
        rng = np.random.default_rng(0)
        ops = Counter(t.draw(rng).parameters["op"] for _ in range(5000))
        assert ops["dilate"] / 5000 == pytest.approx(0.6, abs=0.03)

    def test_drawn_sizes_stay_in_range(self):
        t = TransformDistribution.from_name("dil")
        rng = np.random.default_rng(1)
        sizes = {"dilate": set(), "erode": set()}
        for _ in range(500):
            p = t.draw(rng).parameters
            sizes[p["op"]].add(p["size"])
        assert sizes == {"dilate": {2, 3, 4}, "erode": {1, 2}}

    def test_background_levels_include_both_ends(self):
        t = TransformDistribution.from_name("bg")
        rng = np.random.default_rng(2)
        levels = {t.draw(rng).parameters["b"] for _ in range(3000)}
        assert min(levels) == 0
        assert max(levels) == 100

    @settings(max_examples=30)
    @given(sampled_from(["rot", "bg", "dil", "none"]), integers(0, 1000))
    def test_samples_can_be_replayed_from_their_record(self, name, seed):
        rng = np.random.default_rng(seed)
        x = rng.integers(0, 256, size=(8, 8, 1)).astype(np.uint8)
        t = TransformDistribution.from_name(name)
        sample = t.sample(x, generator(seed, Stream.ONESHOT, 0))
        record = TransformRecord.from_json(sample.record.to_json())
        assert np.array_equal(apply_record(x, record), sample.image)

    def test_same_stream_same_sample(self, image):
        t = TransformDistribution.from_name("rot")
        a = t.sample(image, generator(4, Stream.ONESHOT, 0, 1)).image
        b = t.sample(image, generator(4, Stream.ONESHOT, 0, 1)).image
        assert np.array_equal(a, b)

    def test_it_refuses_records_of_other_families(self, image):
        t = TransformDistribution.from_name("rot")
        with pytest.raises(TransformError):
            t.apply(image, TransformRecord(Family.BACKGROUND, {"b": 3}))

    def test_identity_returns_a_copy(self, image):
        sample = compose_identity().sample(image, np.random.default_rng(0))
        assert np.array_equal(sample.image, image)
        assert sample.image is not image
        assert sample.record.family is Family.IDENTITY


class TestSamplers:
    def test_a_degenerate_angle_range_is_a_fixed_rotation(self, image):
        s = sample_rotation(image, np.random.default_rng(0), math.pi, math.pi)
        assert np.array_equal(s.image, image[::-1, ::-1])
        assert s.record == TransformRecord(Family.ROTATION, {"theta": math.pi})

    def test_angles_stay_in_range(self, image):
        rng = np.random.default_rng(3)
        thetas = [
            sample_rotation(image, rng).record.parameters["theta"] for _ in range(200)
        ]
        assert all(0 <= t < 2 * math.pi for t in thetas)

    def test_background_record_matches_the_image(self, image):
        s = sample_background(image, np.random.default_rng(5), 40, 60)
        b = s.record.parameters["b"]
        assert 40 <= b <= 60
        assert np.array_equal(s.image, replace_background(image, b))

    def test_dilation_frequency_over_ten_thousand_draws(self, image):
        rng = np.random.default_rng(11)
        ops = Counter(
            sample_dilation_erosion(image, rng).record.parameters["op"]
            for _ in range(10_000)
        )
        assert ops["dilate"] / 10_000 == pytest.approx(0.6, abs=0.015)

    def test_the_sampled_op_is_the_one_applied(self, image):
        rng = np.random.default_rng(2)
        for _ in range(20):
            s = sample_dilation_erosion(image, rng)
            op, size = s.record.parameters["op"], s.record.parameters["size"]
            expected = dilate(image, size) if op == "dilate" else erode(image, size)
            assert np.array_equal(s.image, expected)

    @pytest.mark.parametrize(
        "name, sampler",
        [
            ("rot", sample_rotation),
            ("bg", sample_background),
            ("dil", sample_dilation_erosion),
        ],
    )
    def test_distributions_draw_what_the_samplers_draw(self, image, name, sampler):
        t = TransformDistribution.from_name(name)
        for seed in range(10):
            expected = sampler(image, np.random.default_rng(seed))
            sample = t.sample(image, np.random.default_rng(seed))
            assert sample.record == expected.record
            assert np.array_equal(sample.image, expected.image)

    def test_unknown_parameters_are_rejected(self):
        with pytest.raises(TransformError, match="angle"):
            TransformDistribution.from_name("rot", angle=1.0)
