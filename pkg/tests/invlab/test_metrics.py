import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis.strategies import floats, lists

from invlab.metrics import (
    EKLDReport,
    MetricError,
    balanced_accuracy,
    ekld_trend_statistic,
    estimate_ekld,
    kl_divergence,
    per_class_accuracy,
    predict,
)
from invlab.nuisance import TransformDistribution, compose_identity


class ConstantClassifier:
    def __init__(self, proba):
        self.proba = np.asarray(proba, dtype=np.float64)

    def predict_proba(self, images):
        return np.tile(self.proba, (len(images), 1))


class BrightnessClassifier:
    """Two classes; the brighter the image, the more likely class 1."""

    def predict_proba(self, images):
        flat = np.asarray(images, dtype=np.float64).reshape(len(images), -1)
        p1 = flat.mean(axis=1) / 255
        return np.stack([1 - p1, p1], axis=1)


class BarClassifier:
    """Predicts the class whose bar height holds the brightest row."""

    def __init__(self, num_classes):
        self.num_classes = num_classes

    def predict_proba(self, images):
        rows = np.asarray(images, dtype=np.float64).mean(axis=(2, 3))
        tops = [3 * j % (rows.shape[1] - 2) for j in range(self.num_classes)]
        scores = rows[:, tops]
        return np.eye(self.num_classes)[scores.argmax(axis=1)]


def distributions(n):
    weights = lists(floats(0.01, 1.0), min_size=n, max_size=n)
    return weights.map(lambda v: np.array(v) / sum(v))


class TestKLDivergence:
    def test_reference_value(self):
        assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.5108, abs=1e-4)

    @given(distributions(4))
    def test_it_is_zero_for_identical_distributions(self, p):
        assert kl_divergence(p, p) == pytest.approx(0.0, abs=1e-12)

    @given(distributions(3), distributions(3))
    def test_it_is_never_negative(self, p, q):
        assert kl_divergence(p, q) >= 0

    def test_it_is_finite_with_zero_probabilities(self):
        assert math.isfinite(kl_divergence([1.0, 0.0], [0.0, 1.0]))

    def test_it_rejects_nan(self):
        with pytest.raises(MetricError):
            kl_divergence([float("nan"), 1.0], [0.5, 0.5])


class TestEstimateEKLD:
    def test_it_is_zero_under_the_identity(self, make_dataset):
        report = estimate_ekld(
            BrightnessClassifier(), make_dataset((3, 3)), compose_identity()
        )
        assert report.overall_ekld == pytest.approx(0.0, abs=1e-12)

    def test_it_is_zero_for_a_constant_classifier(self, test_set):
        report = estimate_ekld(
            ConstantClassifier([0.1, 0.2, 0.3, 0.4]),
            test_set,
            TransformDistribution.from_name("rot"),
        )
        assert report.overall_ekld == pytest.approx(0.0, abs=1e-12)
        assert report.per_class_counts.tolist() == [48, 48, 48, 48]

    def test_it_detects_sensitivity_to_the_nuisance(self, make_dataset):
        dataset = make_dataset((5, 5))
        report = estimate_ekld(
            BrightnessClassifier(),
            dataset,
            TransformDistribution.from_name("bg"),
            samples_per_input=4,
        )
        assert report.overall_ekld > 0
        assert np.all(report.per_class_ekld > 0)

    def test_it_is_reproducible_and_independent_of_batching(self, make_dataset):
        dataset = make_dataset((5, 5))
        t = TransformDistribution.from_name("bg")
        kwargs = dict(samples_per_input=3, seed=2)
        a = estimate_ekld(BrightnessClassifier(), dataset, t, batch_size=3, **kwargs)
        b = estimate_ekld(BrightnessClassifier(), dataset, t, batch_size=300, **kwargs)
        assert np.allclose(a.per_input, b.per_input)

    def test_more_draws_stay_within_the_bootstrap_error(self, make_dataset):
        dataset = make_dataset((20, 20))
        bg = TransformDistribution.from_name("bg")
        few, many = (
            estimate_ekld(BrightnessClassifier(), dataset, bg, samples_per_input=k)
            for k in (8, 16)
        )
        stderr = few.bootstrap_stderr(200, seed=0)
        assert stderr > 0
        assert abs(many.overall_ekld - few.overall_ekld) < 2 * stderr

    def test_classes_without_inputs_are_missing(self, make_dataset):
        dataset = make_dataset((4, 0, 4))
        report = estimate_ekld(
            ConstantClassifier([0.2, 0.3, 0.5]), dataset, compose_identity()
        )
        assert np.isnan(report.per_class_ekld[1])
        assert report.per_class_counts[1] == 0

    def test_it_attaches_training_class_sizes(self, test_set):
        report = estimate_ekld(
            ConstantClassifier([0.25] * 4),
            test_set,
            compose_identity(),
            class_sizes=[20, 12, 8, 5],
        )
        assert report.class_sizes.tolist() == [20, 12, 8, 5]
        assert report.config["transform_family"] == "identity"

    def test_it_rejects_zero_samples(self, test_set):
        with pytest.raises(MetricError):
            estimate_ekld(
                ConstantClassifier([0.25] * 4),
                test_set,
                compose_identity(),
                samples_per_input=0,
            )

    def test_it_rejects_nan_probabilities(self, test_set):
        with pytest.raises(MetricError):
            estimate_ekld(
                ConstantClassifier([np.nan] * 4), test_set, compose_identity()
            )


class TestEKLDReport:
    @pytest.fixture
    def report(self, make_dataset):
        dataset = make_dataset((6, 6))
        bg = TransformDistribution.from_name("bg")
        return estimate_ekld(BrightnessClassifier(), dataset, bg)

    def test_it_round_trips_through_dicts(self, report):
        back = EKLDReport.from_dict(report.to_dict())
        assert np.allclose(back.per_class_ekld, report.per_class_ekld)
        assert back.overall_ekld == report.overall_ekld

    def test_it_writes_one_csv_row_per_class(self, report, tmp_path):
        report.to_csv(tmp_path / "ekld.csv")
        lines = (tmp_path / "ekld.csv").read_text().splitlines()
        assert lines[0] == "class_index,class_size,ekld_nats,n_samples"
        assert len(lines) == 3

    def test_bootstrap_needs_per_input_values(self, report):
        assert report.bootstrap_stderr(50) >= 0
        with pytest.raises(MetricError):
            EKLDReport.from_dict(report.to_dict()).bootstrap_stderr()

    def test_class_sizes_must_match(self, report):
        with pytest.raises(MetricError):
            report.with_class_sizes([1, 2, 3])


class TestAccuracy:
    def test_a_perfect_classifier_scores_one(self, test_set):
        classifier = BarClassifier(4)
        assert np.array_equal(predict(classifier, test_set.images), test_set.labels)
        assert balanced_accuracy(classifier, test_set) == 1.0

    def test_balanced_accuracy_weights_classes_equally(self, make_dataset):
        dataset = make_dataset((9, 1))
        always_zero = ConstantClassifier([0.9, 0.1])
        assert per_class_accuracy(always_zero, dataset).tolist() == [1.0, 0.0]
        assert balanced_accuracy(always_zero, dataset) == 0.5

    def test_balanced_accuracy_needs_every_class(self, make_dataset):
        dataset = make_dataset((3, 0))
        with pytest.raises(MetricError):
            balanced_accuracy(ConstantClassifier([0.5, 0.5]), dataset)
        assert np.isnan(per_class_accuracy(ConstantClassifier([0.5, 0.5]), dataset)[1])


class TestTrendStatistic:
    def make(self, ekld, sizes):
        ekld = np.asarray(ekld, dtype=np.float64)
        counts = np.ones(len(ekld), np.int64)
        return EKLDReport(ekld, counts, float(np.nanmean(ekld)), np.asarray(sizes))

    def test_it_is_negative_when_large_classes_are_more_invariant(self):
        report = self.make([0.1, 0.2, 0.3, 0.4], [100, 50, 20, 5])
        assert ekld_trend_statistic(report) == pytest.approx(-1.0)

    def test_a_single_swapped_pair_gives_minus_0_8(self):
        report = self.make([0.1, 0.2, 0.15, 0.4], [100, 50, 20, 5])
        assert ekld_trend_statistic(report) == pytest.approx(-0.8)

    def test_it_is_zero_for_a_constant_ekld(self):
        assert ekld_trend_statistic(self.make([0.2] * 4, [100, 50, 20, 5])) == 0.0

    def test_it_ignores_missing_classes(self):
        report = self.make([0.1, np.nan, 0.3, 0.4], [100, 50, 20, 5])
        assert ekld_trend_statistic(report) == pytest.approx(-1.0)

    @pytest.mark.parametrize(
        "ekld, sizes",
        [
            ([0.1, 0.2], [10, 5]),
            ([0.1, 0.2, 0.3], [5, 5, 5]),
            ([0.1, np.nan, np.nan, 0.2], [4, 3, 2, 1]),
        ],
    )
    def test_it_is_undefined_for_degenerate_inputs(self, ekld, sizes):
        with pytest.raises(MetricError):
            ekld_trend_statistic(self.make(ekld, sizes))
