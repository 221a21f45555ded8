"""
:mod:`invlab.seeding` -- Splittable random streams
==================================================

Every random decision in invlab is taken from a stream identified by a master
seed, a :class:`Stream` purpose and zero or more integer indices (class index,
image index, epoch, ...).
Streams are derived with :class:`numpy.random.SeedSequence` ``spawn_key``\\ s,
so a stream only depends on its own keys: processing classes or images in a
different order, or in parallel workers, draws exactly the same numbers.

>>> a = generator(7, Stream.PRUNE, 3).integers(1000)
>>> b = generator(7, Stream.PRUNE, 3).integers(1000)
>>> int(a) == int(b)
True
>>> int(generator(7, Stream.PRUNE, 4).integers(1 << 30)) != int(
...     generator(7, Stream.PRUNE, 3).integers(1 << 30))
True
"""
import enum

import numpy as np
import torch

MASK_64 = (1 << 64) - 1


class Stream(enum.IntEnum):
    """Purposes of the random streams; values are part of the on-disk contract."""

    ORDERING = 1  #: Permutation of classes into long-tail ranks.
    PRUNE = 2  #: Per-class choice of retained examples.
    ONESHOT = 3  #: Per-image one-shot nuisance transform.
    ISOTRANSFORM = 4  #: Per-class originals and per-example transforms.
    EKLD = 5  #: Per-input transform draws when measuring eKLD.
    SAMPLER = 6  #: Per-epoch example order.
    GIT = 7  #: Per-batch generative augmentation.
    AUGMENT = 8  #: Per-batch standard augmentations (plugins).
    MIITN = 9  #: MIITN initialisation and training data order.
    MODEL_INIT = 10  #: Classifier weight initialisation.
    SPLIT = 11  #: Train/validation split of a base dataset.
    BOOTSTRAP = 12  #: Bootstrap resampling of estimates.


def seed_sequence(
    master_seed: int, stream: Stream, *indices: int
) -> np.random.SeedSequence:
    """
    The :class:`~numpy.random.SeedSequence` of one stream.

    :raise ValueError: if an index is negative.
    """
    if any(i < 0 for i in indices):
        raise ValueError(f"stream indices must be non-negative, got {indices!r}")
    return np.random.SeedSequence(
        int(master_seed) & MASK_64, spawn_key=(int(stream), *map(int, indices))
    )


def generator(master_seed: int, stream: Stream, *indices: int) -> np.random.Generator:
    """A fresh numpy generator for one stream."""
    return np.random.default_rng(seed_sequence(master_seed, stream, *indices))


def derive_seed(master_seed: int, stream: Stream, *indices: int) -> int:
    """A 63-bit integer seed for libraries that only take integers (torch)."""
    state = seed_sequence(master_seed, stream, *indices).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def torch_generator(master_seed: int, stream: Stream, *indices: int) -> torch.Generator:
    """A fresh CPU :class:`torch.Generator` for one stream."""
    g = torch.Generator()
    g.manual_seed(derive_seed(master_seed, stream, *indices))
    return g
