"""
:mod:`invlab.metrics` -- Invariance and accuracy metrics
========================================================

The expected KL divergence (eKLD) of a classifier under a nuisance
distribution ``T`` measures how much its predicted class probabilities move
when an input is transformed:

.. math::

    \\mathrm{eKLD} = \\mathbb{E}_{x}\\,\\mathbb{E}_{x' \\sim T(\\cdot|x)}
    \\left[ D_{KL}\\left(\\hat P(\\cdot|x) \\,\\|\\, \\hat P(\\cdot|x')\\right) \\right]

Lower is more invariant. It is reported per class, in nats, on held-out
examples.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Protocol, Sequence, Union

import numpy as np
import pandas as pd
from scipy import stats

from invlab.dataset import LabeledImageDataset
from invlab.nuisance import ImageSampler
from invlab.seeding import Stream, generator

#: Floor applied to probabilities before taking logarithms.
EPSILON = 1e-12

DEFAULT_SAMPLES_PER_INPUT = 8
CSV_COLUMNS = ("class_index", "class_size", "ekld_nats", "n_samples")


class MetricError(ValueError):
    """
    Raised when a metric is undefined for its inputs (NaN probabilities,
    empty classes, tied class sizes...).
    """


class Classifier(Protocol):
    """Anything that maps a batch of 8-bit images to class probabilities."""

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        """``(N, H, W, C)`` uint8 images to ``(N, num_classes)`` probabilities."""


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise ``KL(p_i || q_i)`` in nats, see :func:`kl_divergence`."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if np.isnan(p).any() or np.isnan(q).any():
        raise MetricError("probability vectors contain NaN")
    p = np.maximum(p, EPSILON)
    q = np.maximum(q, EPSILON)
    return np.maximum(np.sum(p * (np.log(p) - np.log(q)), axis=-1), 0.0)


def kl_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """
    ``Σ p_i ln(p_i / q_i)``, with both vectors floored at :data:`EPSILON`.

    >>> round(kl_divergence([0.5, 0.5], [0.9, 0.1]), 4)
    0.5108

    :raise MetricError: if either vector contains NaN.
    """
    return float(kl_rows(p, q))


@dataclass(eq=False)
class EKLDReport:
    """
    Per-class eKLD of one classifier under one transform distribution.

    .. attribute:: per_class_ekld

        Mean KL per class, in nats; NaN for classes without held-out inputs.

    .. attribute:: per_class_counts

        Number of (input, draw) pairs behind each entry.

    .. attribute:: overall_ekld

        Example-weighted mean of the per-class entries.

    .. attribute:: class_sizes

        Training-set size of each class, used to arrange figures and compute
        trends. Defaults to the held-out class sizes.

    .. attribute:: config

        Transform family, samples per input and seed.

    .. attribute:: per_input

        Mean KL of each held-out input (same order as :attr:`labels`);
        needed for bootstrap errors, not serialized to CSV.
    """

    per_class_ekld: np.ndarray
    per_class_counts: np.ndarray
    overall_ekld: float
    class_sizes: np.ndarray
    config: Dict[str, Any] = field(default_factory=dict)
    per_input: np.ndarray = field(default_factory=lambda: np.zeros(0))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def num_classes(self) -> int:
        return len(self.per_class_ekld)

    def with_class_sizes(self, class_sizes: Sequence[int]) -> "EKLDReport":
        sizes = np.asarray(class_sizes, dtype=np.int64)
        if len(sizes) != self.num_classes:
            raise MetricError(
                f"{len(sizes)} class sizes for a report over {self.num_classes} classes"
            )
        return EKLDReport(
            self.per_class_ekld,
            self.per_class_counts,
            self.overall_ekld,
            sizes,
            dict(self.config),
            self.per_input,
            self.labels,
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "class_index": np.arange(self.num_classes),
                "class_size": self.class_sizes,
                "ekld_nats": self.per_class_ekld,
                "n_samples": self.per_class_counts,
            },
            columns=list(CSV_COLUMNS),
        )

    def to_csv(self, path: Union[str, Path]) -> None:
        """Writes one row per class; missing entries are empty cells."""
        self.to_frame().to_csv(path, index=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "per_class_ekld": [
                None if np.isnan(v) else float(v) for v in self.per_class_ekld
            ],
            "per_class_counts": self.per_class_counts.tolist(),
            "overall_ekld": self.overall_ekld,
            "class_sizes": self.class_sizes.tolist(),
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EKLDReport":
        return cls(
            per_class_ekld=np.array(
                [np.nan if v is None else v for v in d["per_class_ekld"]],
                dtype=np.float64,
            ),
            per_class_counts=np.asarray(d["per_class_counts"], dtype=np.int64),
            overall_ekld=float(d["overall_ekld"]),
            class_sizes=np.asarray(d["class_sizes"], dtype=np.int64),
            config=dict(d.get("config", {})),
        )

    def bootstrap_stderr(self, n_resamples: int = 200, seed: int = 0) -> float:
        """
        Standard error of :attr:`overall_ekld`, by resampling held-out inputs
        with replacement.

        :raise MetricError: without per-input values (e.g. a report read
            back from JSON).
        """
        if len(self.per_input) < 2:
            raise MetricError("bootstrap needs per-input values for ≥ 2 inputs")
        rng = generator(seed, Stream.BOOTSTRAP)
        n = len(self.per_input)
        means = [
            self.per_input[rng.integers(0, n, n)].mean() for _ in range(n_resamples)
        ]
        return float(np.std(means, ddof=1))


def _batches(n: int, size: int):
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))


def _checked_proba(classifier: Classifier, images: np.ndarray) -> np.ndarray:
    proba = np.asarray(classifier.predict_proba(images), dtype=np.float64)
    if np.isnan(proba).any():
        raise MetricError("classifier returned NaN probabilities")
    return proba


def estimate_ekld(
    classifier: Classifier,
    dataset: LabeledImageDataset,
    transform: ImageSampler,
    samples_per_input: int = DEFAULT_SAMPLES_PER_INPUT,
    seed: int = 0,
    batch_size: int = 256,
    class_sizes: Optional[Sequence[int]] = None,
) -> EKLDReport:
    """
    For each input ``x`` of *dataset*, draws *samples_per_input* fresh
    ``x' ~ transform(·|x)`` and averages ``KL(P(·|x) || P(·|x'))``.
    Input ``i`` draws from its own stream, keyed by *seed* and ``i``.

    :param class_sizes: training class sizes to attach to the report.
    :raise MetricError: if ``samples_per_input < 1`` or the classifier
        returns NaN.
    """
    if samples_per_input < 1:
        raise MetricError(f"samples_per_input must be ≥ 1, got {samples_per_input}")
    n, k = len(dataset), samples_per_input
    per_input = np.zeros(n)
    for batch in _batches(n, max(1, batch_size // k)):
        images = dataset.images[batch]
        p = _checked_proba(classifier, images)
        transformed = np.empty((len(images) * k, *images.shape[1:]), np.uint8)
        for offset, image in enumerate(images):
            rng = generator(seed, Stream.EKLD, batch.start + offset)
            for d in range(k):
                transformed[offset * k + d] = transform.sample(image, rng).image
        q = _checked_proba(classifier, transformed)
        kl = kl_rows(np.repeat(p, k, axis=0), q)
        per_input[batch] = kl.reshape(len(images), k).mean(axis=1)

    counts = np.bincount(dataset.labels, minlength=dataset.num_classes)
    sums = np.bincount(dataset.labels, weights=per_input, minlength=dataset.num_classes)
    per_class = np.full(dataset.num_classes, np.nan)
    np.divide(sums, counts, out=per_class, where=counts > 0)
    empty = np.flatnonzero(counts == 0)
    if len(empty):
        logging.info(
            "no held-out inputs for classes %s; eKLD left missing", empty.tolist()
        )

    family = getattr(transform, "family", None)
    report = EKLDReport(
        per_class_ekld=per_class,
        per_class_counts=counts * k,
        overall_ekld=float(per_input.mean()) if n else float("nan"),
        class_sizes=np.asarray(class_sizes if class_sizes is not None else counts),
        config={
            "transform_family": getattr(family, "value", str(family)),
            "samples_per_input": k,
            "seed": seed,
            "split": dataset.split,
        },
        per_input=per_input,
        labels=dataset.labels,
    )
    logging.info("eKLD of %d inputs × %d draws: %.4f nats", n, k, report.overall_ekld)
    return report


def predict(
    classifier: Classifier, images: np.ndarray, batch_size: int = 512
) -> np.ndarray:
    """Arg-max predictions, computed by batches."""
    out = np.zeros(len(images), dtype=np.int64)
    for batch in _batches(len(images), batch_size):
        out[batch] = _checked_proba(classifier, images[batch]).argmax(axis=1)
    return out


def per_class_accuracy(
    classifier: Classifier, dataset: LabeledImageDataset
) -> np.ndarray:
    """Accuracy on each class; NaN for classes without examples."""
    correct = predict(classifier, dataset.images) == dataset.labels
    counts = dataset.class_sizes
    hits = np.bincount(
        dataset.labels,
        weights=correct.astype(np.float64),
        minlength=dataset.num_classes,
    )
    acc = np.full(dataset.num_classes, np.nan)
    np.divide(hits, counts, out=acc, where=counts > 0)
    return acc


def balanced_accuracy(classifier: Classifier, dataset: LabeledImageDataset) -> float:
    """
    Unweighted mean of per-class accuracies.

    :raise MetricError: if a class has no example.
    """
    empty = np.flatnonzero(dataset.class_sizes == 0)
    if len(empty):
        raise MetricError(
            f"balanced accuracy needs every class; empty: {empty.tolist()}"
        )
    return float(per_class_accuracy(classifier, dataset).mean())


def ekld_trend_statistic(
    report: EKLDReport, class_sizes: Optional[Sequence[int]] = None
) -> float:
    """
    Spearman rank correlation between class size and per-class eKLD, over
    classes with an eKLD entry. Negative values mean larger classes are more
    invariant. A constant eKLD gives 0.

    >>> sizes = np.array([100, 50, 20, 5])
    >>> r = EKLDReport(np.array([.1, .2, .15, .4]), np.ones(4), 0.2, sizes)
    >>> round(ekld_trend_statistic(r), 6)
    -0.8

    :raise MetricError: with fewer than 3 usable classes, or when all class
        sizes tie.
    """
    if class_sizes is None:
        class_sizes = report.class_sizes
    sizes = np.asarray(class_sizes, dtype=np.float64)
    ekld = np.asarray(report.per_class_ekld, dtype=np.float64)
    usable = ~np.isnan(ekld)
    sizes, ekld = sizes[usable], ekld[usable]
    if len(sizes) < 3:
        raise MetricError(f"trend needs ≥ 3 classes with data, got {len(sizes)}")
    if np.all(sizes == sizes[0]):
        raise MetricError("trend is undefined when all class sizes tie")
    if np.all(ekld == ekld[0]):
        return 0.0
    rho, _ = stats.spearmanr(sizes, ekld)
    return float(rho)
