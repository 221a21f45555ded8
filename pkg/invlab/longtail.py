"""
:mod:`invlab.longtail` -- Long-tailed variants of balanced datasets
===================================================================

A :class:`LongTailPlan` assigns a target size to each class rank, following a
decay law with a floor.
:func:`build_longtail_dataset` prunes a base training set to that plan,
:func:`apply_oneshot_transform` replaces each image by one nuisance sample
(this is how e.g. K49-ROT is derived from K49), and
:func:`build_isotransform_dataset` builds control datasets in which every
class holds the same few originals, transformed as often as its target needs.

>>> make_longtail_plan(4, 40, DecayLaw.parse("zipf:2.0"), floor=5).target_sizes
(40, 10, 5, 5)
"""
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Mapping, Tuple

import numpy as np

from invlab.dataset import SPLITS, TEST, LabeledImageDataset
from invlab.nuisance import Family, TransformDistribution
from invlab.seeding import Stream, generator


class PlanError(ValueError):
    """Raised for invalid long-tail plan arguments."""


class PruningError(ValueError):  # noqa: B903
    """
    Raised when a dataset cannot be pruned or resampled as requested, e.g.
    when asked to prune a test split.
    """

    def __init__(self, dataset_name: str, reason: str) -> None:
        super().__init__(f"{dataset_name}: {reason}")
        self.dataset_name = dataset_name
        self.reason = reason


class Law(enum.Enum):
    ZIPF = "zipf"
    EXPONENTIAL = "exp"


@dataclass(frozen=True)
class DecayLaw:
    """
    How target sizes decay with rank.

    .. attribute:: kind

        :class:`Law` -- Zipf (power law) or exponential.

    .. attribute:: value

        :any:`float` -- Zipf exponent ``s ≥ 0``, or exponential imbalance
        ratio ``IR ≥ 1`` (head size over tail size).
    """

    kind: Law
    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise PlanError(f"decay parameter must be finite, got {self.value}")
        if self.kind is Law.ZIPF and self.value < 0:
            raise PlanError(f"zipf exponent must be ≥ 0, got {self.value}")
        if self.kind is Law.EXPONENTIAL and self.value < 1:
            raise PlanError(f"imbalance ratio must be ≥ 1, got {self.value}")

    @classmethod
    def zipf(cls, exponent: float) -> "DecayLaw":
        return cls(Law.ZIPF, float(exponent))

    @classmethod
    def exponential(cls, imbalance_ratio: float) -> "DecayLaw":
        return cls(Law.EXPONENTIAL, float(imbalance_ratio))

    @classmethod
    def parse(cls, text: str) -> "DecayLaw":
        """
        >>> DecayLaw.parse("exp:100")
        DecayLaw(kind=<Law.EXPONENTIAL: 'exp'>, value=100.0)

        :raise PlanError: if *text* is not ``zipf:<s>`` or ``exp:<IR>``.
        """
        kind, sep, value = text.partition(":")
        try:
            return cls(Law(kind.strip().lower()), float(value))
        except ValueError as err:
            if isinstance(err, PlanError):
                raise
            raise PlanError(
                f"invalid decay law {text!r}, expected zipf:<exponent> or exp:<ratio>"
            ) from None

    def __str__(self) -> str:
        return f"{self.kind.value}:{self.value:g}"

    def size_at(self, rank: int, head_size: int, num_classes: int) -> float:
        """Unrounded target for the 1-based *rank*."""
        if self.kind is Law.ZIPF:
            return head_size / rank ** self.value
        return head_size * self.value ** (-(rank - 1) / (num_classes - 1))


@dataclass(frozen=True)
class LongTailPlan:
    """
    Per-rank target sizes, and which class holds each rank.

    .. attribute:: target_sizes

        Non-increasing targets, one per rank (rank 1 first).

    .. attribute:: law

        The :class:`DecayLaw` the targets were derived from.

    .. attribute:: floor

        Minimum class size.

    .. attribute:: head_size

        Target of rank 1 before flooring.

    .. attribute:: class_order

        Permutation of class indices: ``class_order[r]`` holds rank ``r``
        (0-based). Identity unless the plan was :meth:`reordered`.
    """

    target_sizes: Tuple[int, ...]
    law: DecayLaw
    floor: int
    head_size: int
    class_order: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.target_sizes)
        order = tuple(int(c) for c in self.class_order) or tuple(range(len(sizes)))
        object.__setattr__(self, "target_sizes", sizes)
        object.__setattr__(self, "class_order", order)
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise PlanError(f"target sizes must be non-increasing: {sizes}")
        if sizes and min(sizes) < self.floor:
            raise PlanError(f"target sizes must be ≥ floor {self.floor}: {sizes}")
        if sorted(order) != list(range(len(sizes))):
            raise PlanError(
                f"class order must be a permutation of range({len(sizes)}): {order}"
            )

    @property
    def num_classes(self) -> int:
        return len(self.target_sizes)

    @property
    def total(self) -> int:
        return sum(self.target_sizes)

    def targets_by_class(self) -> np.ndarray:
        """``result[j]`` is the target of class ``j``."""
        by_class = np.empty(self.num_classes, dtype=np.int64)
        by_class[list(self.class_order)] = self.target_sizes
        return by_class

    def reordered(self, ordering_seed: int) -> "LongTailPlan":
        """The same plan with a class order drawn from *ordering_seed*."""
        rng = generator(ordering_seed, Stream.ORDERING)
        order = rng.permutation(self.num_classes)
        return replace(self, class_order=tuple(order.tolist()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "law": str(self.law),
            "floor": self.floor,
            "head_size": self.head_size,
            "target_sizes": list(self.target_sizes),
            "class_order": list(self.class_order),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LongTailPlan":
        return cls(
            target_sizes=tuple(d["target_sizes"]),
            law=DecayLaw.parse(d["law"]),
            floor=int(d["floor"]),
            head_size=int(d["head_size"]),
            class_order=tuple(d.get("class_order", ())),
        )


def make_longtail_plan(
    num_classes: int, head_size: int, law: DecayLaw, floor: int
) -> LongTailPlan:
    """
    Targets ``max(floor, round(head_size / r^s))`` for a Zipf law, or
    ``max(floor, round(head_size · IR^(−(r−1)/(num_classes−1))))`` for an
    exponential law, for ranks ``r = 1 … num_classes``.
    Rounding is half-to-even.

    >>> make_longtail_plan(10, 5000, DecayLaw.exponential(100), 1).target_sizes[-1]
    50

    :raise PlanError: for non-positive sizes, a head smaller than the floor,
        or an exponential law over a single class.
    """
    if num_classes < 1:
        raise PlanError(f"num_classes must be ≥ 1, got {num_classes}")
    if floor < 1:
        raise PlanError(f"floor must be ≥ 1, got {floor}")
    if head_size < floor:
        raise PlanError(f"head_size must be ≥ floor ({floor}), got {head_size}")
    if law.kind is Law.EXPONENTIAL and num_classes == 1:
        raise PlanError("an exponential law needs at least 2 classes")
    targets = tuple(
        max(floor, round(law.size_at(r, head_size, num_classes)))
        for r in range(1, num_classes + 1)
    )
    return LongTailPlan(targets, law=law, floor=floor, head_size=head_size)


@dataclass(frozen=True)
class DatasetVariant:
    """
    Identity of a built variant: a base dataset, a transform family, a plan
    and the seed that orders its classes.
    """

    base: str
    transform_family: Family
    plan: LongTailPlan
    ordering_seed: int
    extra: Mapping[str, Any] = field(default_factory=dict)

    @property
    def class_order(self) -> Tuple[int, ...]:
        return self.plan.reordered(self.ordering_seed).class_order

    def to_dict(self) -> Dict[str, Any]:
        return {
            "base": self.base,
            "transform_family": self.transform_family.value,
            "plan": self.plan.to_dict(),
            "ordering_seed": self.ordering_seed,
            **dict(self.extra),
        }


def build_longtail_dataset(
    base: LabeledImageDataset,
    plan: LongTailPlan,
    ordering_seed: int,
    reorder: bool = True,
) -> LabeledImageDataset:
    """
    Prunes *base* so that the class at rank ``r`` keeps
    ``min(target_sizes[r], available)`` examples, drawn uniformly without
    replacement.
    Retained examples keep their relative order from *base*.

    :param reorder: draw the class order from *ordering_seed*; otherwise keep
        ``plan.class_order``.
    :raise PruningError: if *base* is a test split or has another number of
        classes than *plan*.
    """
    if base.split == TEST:
        raise PruningError(base.name, "test splits are never pruned")
    if base.num_classes != plan.num_classes:
        raise PruningError(
            base.name,
            f"plan has {plan.num_classes} classes, dataset has {base.num_classes}",
        )
    if reorder:
        plan = plan.reordered(ordering_seed)

    available = base.class_sizes
    targets = plan.targets_by_class()
    kept = []
    shortfalls = {}
    for j in range(base.num_classes):
        members = base.class_indices(j)
        n = min(int(targets[j]), len(members))
        if n < targets[j]:
            shortfalls[j] = int(targets[j]) - n
        rng = generator(ordering_seed, Stream.PRUNE, j)
        kept.append(rng.choice(members, size=n, replace=False))
    if shortfalls:
        logging.warning(
            "%s: %d classes have fewer examples than planned (%d missing); "
            "keeping all of them",
            base.name,
            len(shortfalls),
            sum(shortfalls.values()),
        )

    indices = np.sort(np.concatenate(kept)) if kept else np.zeros(0, np.int64)
    result = base.subset(
        indices,
        plan=plan.to_dict(),
        ordering_seed=ordering_seed,
        available_sizes=available.tolist(),
        target_sizes=targets.tolist(),
        shortfalls={str(j): d for j, d in shortfalls.items()},
        source_indices=indices.tolist(),
    )
    result.metadata["actual_sizes"] = result.class_sizes.tolist()
    logging.info(
        "pruned %s from %d to %d examples (seed %d)",
        base.name,
        len(base),
        len(result),
        ordering_seed,
    )
    return result


def _split_key(dataset: LabeledImageDataset) -> int:
    split = dataset.split
    return SPLITS.index(split) if split in SPLITS else len(SPLITS)


def apply_oneshot_transform(
    base: LabeledImageDataset, transform: TransformDistribution, seed: int
) -> LabeledImageDataset:
    """
    Replaces each image of *base* by exactly one sample of
    ``transform(·|x)``; labels are unchanged.
    The drawn parameters of image ``i`` are in ``metadata["transforms"][i]``.

    Image ``i`` draws from its own stream, keyed by *seed*, the split and
    ``i``, so train and test splits get independent draws.
    """
    if transform.is_identity:
        identity = {"family": Family.IDENTITY.value, "parameters": {}}
        return base.with_images(
            base.images,
            transform_family=transform.family.value,
            transform_seed=seed,
            transforms=[identity] * len(base),
        )
    split_key = _split_key(base)
    images = np.empty_like(base.images)
    records = []
    for i, image in enumerate(base.images):
        keys = (split_key, i)
        sample = transform.sample(image, generator(seed, Stream.ONESHOT, *keys))
        images[i] = sample.image
        records.append(
            replace(sample.record, seed=(seed, int(Stream.ONESHOT), *keys)).to_dict()
        )
    logging.info(
        "applied %s to %d images of %s", transform.family.value, len(base), base.name
    )
    return base.with_images(
        images,
        transform_family=transform.family.value,
        transform_seed=seed,
        transforms=records,
    )


def build_isotransform_dataset(
    base: LabeledImageDataset,
    plan: LongTailPlan,
    transform: TransformDistribution,
    originals_per_class: int,
    seed: int,
    reorder: bool = True,
) -> LabeledImageDataset:
    """
    Builds a control dataset in which every class has the same number of
    distinct pre-images: class ``j`` keeps *originals_per_class* base images
    and is filled up to its target with fresh transform samples of them,
    cycling through the originals.

    :raise PruningError: if *originals_per_class* is 0, exceeds some class's
        availability or some class's target, or *base* is a test split.
    """
    if originals_per_class < 1:
        raise PruningError(base.name, "originals_per_class must be ≥ 1")
    if base.split == TEST:
        raise PruningError(base.name, "test splits are never pruned")
    if base.num_classes != plan.num_classes:
        raise PruningError(
            base.name,
            f"plan has {plan.num_classes} classes, dataset has {base.num_classes}",
        )
    if min(plan.target_sizes) < originals_per_class:
        raise PruningError(
            base.name,
            f"every target must be ≥ originals_per_class ({originals_per_class})",
        )
    lacking = np.flatnonzero(base.class_sizes < originals_per_class)
    if len(lacking):
        raise PruningError(
            base.name,
            f"classes {lacking.tolist()} have fewer than "
            f"{originals_per_class} examples",
        )
    if reorder:
        plan = plan.reordered(seed)

    targets = plan.targets_by_class()
    images, labels, sources, records = [], [], [], []
    for j in range(base.num_classes):
        originals = np.sort(
            generator(seed, Stream.ISOTRANSFORM, j, 0).choice(
                base.class_indices(j), size=originals_per_class, replace=False
            )
        )
        for k in range(int(targets[j])):
            source = int(originals[k % originals_per_class])
            sample = transform.sample(
                base.images[source], generator(seed, Stream.ISOTRANSFORM, j, k + 1)
            )
            images.append(sample.image)
            labels.append(j)
            sources.append(source)
            records.append(
                replace(
                    sample.record, seed=(seed, int(Stream.ISOTRANSFORM), j, k + 1)
                ).to_dict()
            )

    shape = base.image_shape
    return LabeledImageDataset(
        images=np.stack(images) if images else np.zeros((0, *shape), np.uint8),
        labels=np.asarray(labels, dtype=np.int64),
        num_classes=base.num_classes,
        metadata={
            **base.metadata,
            "plan": plan.to_dict(),
            "ordering_seed": seed,
            "originals_per_class": originals_per_class,
            "transform_family": transform.family.value,
            "source_indices": sources,
            "transforms": records,
            "actual_sizes": targets.tolist(),
        },
    )
