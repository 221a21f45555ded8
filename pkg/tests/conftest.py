from pathlib import Path
from typing import Sequence, Tuple

import numpy as np
from pytest import fixture

from invlab.dataset import TEST, TRAIN, LabeledImageDataset, save_splits


def synthetic_dataset(
    class_sizes: Sequence[int],
    shape: Tuple[int, int, int] = (16, 16, 1),
    split: str = TRAIN,
    seed: int = 0,
    name: str = "synthetic",
) -> LabeledImageDataset:
    """
    Class ``j`` is a bright horizontal bar at a class-specific height over a
    dark, slightly noisy background.
    """
    h, w, c = shape
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(class_sizes)), class_sizes)
    images = rng.integers(0, 30, size=(len(labels), h, w, c)).astype(np.uint8)
    for i, j in enumerate(labels):
        top = (3 * j) % (h - 2)
        images[i, top : top + 2, 2 : w - 2] = 200 + rng.integers(0, 55)
    return LabeledImageDataset(
        images=images,
        labels=labels,
        num_classes=len(class_sizes),
        metadata={"name": name, "split": split},
    )


@fixture
def make_dataset():
    return synthetic_dataset


@fixture
def train_set() -> LabeledImageDataset:
    return synthetic_dataset((20, 12, 8, 5))


@fixture
def test_set() -> LabeledImageDataset:
    return synthetic_dataset((6, 6, 6, 6), split=TEST, seed=1)


@fixture
def base_dir(tmp_path: Path) -> Path:
    """A balanced 4-class base dataset in portable layout."""
    directory = tmp_path / "tiny"
    save_splits(
        directory,
        {
            TRAIN: synthetic_dataset((12, 12, 12, 12), name="tiny"),
            TEST: synthetic_dataset((4, 4, 4, 4), split=TEST, seed=1, name="tiny"),
        },
    )
    return directory
