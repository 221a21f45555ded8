"""
:mod:`invlab.git` -- Generative invariance transfer
===================================================

During classifier training, a proportion ``p`` of every batch is designated
for augmentation: the first ``Round(p·|B|)`` positions of the (already
shuffled) batch.
Each designated example whose class has at most ``K`` training examples is
replaced by ``(x̃, y)`` with ``x̃`` sampled from a *generator* given ``x``:
either a learned MIITN, or an *oracle* drawing from the true nuisance
family. Labels never change.
"""
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import torch

from invlab.miitn import MiitnTransform, ResolutionMismatchError, load_miitn
from invlab.nuisance import Family, TransformDistribution


class GitError(ValueError):
    """Raised for invalid augmentation settings or batches."""


class Generator(Protocol):
    """A conditional image sampler that works on whole batches."""

    family: Family

    def sample_batch(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """``(N, H, W, C)`` uint8 images to as many transformed images."""


class OracleGenerator:
    """Fresh draws from a ground-truth :class:`TransformDistribution`."""

    def __init__(self, transform: TransformDistribution) -> None:
        self.transform = transform

    @property
    def family(self) -> Family:
        return self.transform.family

    def sample_batch(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        out = np.empty_like(images)
        for i, image in enumerate(images):
            out[i] = self.transform.sample(image, rng).image
        return out

    def __repr__(self) -> str:
        return f"oracle({self.transform.family.value})"


def oracle_generator(transform: TransformDistribution) -> OracleGenerator:
    """
    >>> from invlab.nuisance import compose_identity
    >>> oracle_generator(compose_identity())
    oracle(identity)
    """
    return OracleGenerator(transform)


def miitn_generator(
    checkpoint: Union[str, Path], device: Union[str, torch.device] = "cpu"
) -> MiitnTransform:
    """
    :raise CheckpointFormatError: if *checkpoint* is not a MIITN checkpoint.
    """
    return MiitnTransform(load_miitn(checkpoint, device))


@dataclass(frozen=True)
class GitConfig:
    """
    .. attribute:: p

        Proportion of each batch designated for augmentation, in ``[0, 1]``.

    .. attribute:: cutoff

        Class-size cutoff ``K``: only classes with at most ``K`` training
        examples are augmented. :data:`math.inf` augments all classes.

    .. attribute:: generator

        A :class:`Generator`, or :any:`None` to disable augmentation.
    """

    p: float = 0.0
    cutoff: float = math.inf
    generator: Optional[Generator] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.p <= 1:
            raise GitError(f"p must be in [0, 1], got {self.p}")
        if not self.cutoff >= 0:
            raise GitError(f"cutoff must be ≥ 0, got {self.cutoff}")

    @classmethod
    def disabled(cls) -> "GitConfig":
        return cls()

    @property
    def enabled(self) -> bool:
        return self.generator is not None and self.p > 0

    @property
    def label(self) -> str:
        """
        Suffix of method labels: ``""``, ``"+GIT"``, ``"+Oracle"``, with
        ``" (all classes)"`` appended without cutoff.

        >>> GitConfig().label
        ''
        """
        if not self.enabled:
            return ""
        name = "Oracle" if isinstance(self.generator, OracleGenerator) else "GIT"
        return f"+{name}" if math.isfinite(self.cutoff) else f"+{name} (all classes)"


def candidate_count(batch_size: int, p: float) -> int:
    """
    ``Round(p·|B|)``, rounding half to even.

    >>> candidate_count(128, 0.5)
    64
    >>> candidate_count(5, 0.5)
    2
    """
    return int(np.round(p * batch_size))


@dataclass(frozen=True, eq=False)
class Batch:
    """
    One training batch, as seen by ``OnBatch`` plugins and the augmentation
    step.

    .. attribute:: images

        ``(N, H, W, C)`` uint8 images.

    .. attribute:: labels

        ``(N,)`` int64 labels.

    .. attribute:: indices

        Position of each example in the training set.

    .. attribute:: git_slots

        Number of leading positions designated for generative augmentation.

    .. attribute:: generated

        ``(N,)`` booleans, true for images produced by a generator.
    """

    images: np.ndarray
    labels: np.ndarray
    indices: np.ndarray
    git_slots: int = 0
    generated: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.generated is None:
            generated = np.zeros(len(self.labels), dtype=bool)
            object.__setattr__(self, "generated", generated)
        arrays = (self.images, self.labels, self.indices, self.generated)
        lengths = {len(a) for a in arrays}
        if len(lengths) != 1:
            raise GitError("batch arrays must have the same length")
        if not 0 <= self.git_slots <= len(self.labels):
            raise GitError(
                f"git_slots must be in [0, {len(self.labels)}], got {self.git_slots}"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def other_slots(self) -> slice:
        """Positions not designated for generative augmentation."""
        return slice(self.git_slots, len(self))

    def replace(self, **changes) -> "Batch":
        return replace(self, **changes)


def check_resolution(cfg: GitConfig, image_shape: Tuple[int, int, int]) -> None:
    """
    Fails early when the generator cannot produce images of *image_shape*.

    :raise ResolutionMismatchError: for a MIITN built for another resolution.
    :raise TransformError: for an oracle family that does not apply to
        such images.
    """
    if not cfg.enabled:
        return
    expected = getattr(cfg.generator, "image_shape", None)
    if expected is not None and tuple(expected) != tuple(image_shape):
        raise ResolutionMismatchError(tuple(expected), tuple(image_shape))
    if isinstance(cfg.generator, OracleGenerator):
        probe = np.zeros((1, *image_shape), dtype=np.uint8)
        cfg.generator.sample_batch(probe, np.random.default_rng(0))


def git_augment_batch(
    batch: Batch, class_sizes: Sequence[int], cfg: GitConfig, rng: np.random.Generator
) -> Batch:
    """
    Replaces designated small-class examples by generator samples.

    Candidates are the first ``Round(p·|B|)`` positions; a candidate is
    replaced when its class has at most ``cfg.cutoff`` training examples.

    :raise GitError: for an empty batch.
    """
    if len(batch) == 0:
        raise GitError("cannot augment an empty batch")
    n = candidate_count(len(batch), cfg.p)
    if not cfg.enabled or n == 0:
        return batch
    sizes = np.asarray(class_sizes)
    selected = np.zeros(len(batch), dtype=bool)
    selected[:n] = sizes[batch.labels[:n]] <= cfg.cutoff
    if not selected.any():
        return batch.replace(git_slots=max(batch.git_slots, n))
    images = np.array(batch.images, copy=True)
    images[selected] = cfg.generator.sample_batch(batch.images[selected], rng)
    return batch.replace(
        images=images,
        git_slots=max(batch.git_slots, n),
        generated=batch.generated | selected,
    )
