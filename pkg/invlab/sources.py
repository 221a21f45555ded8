"""
:mod:`invlab.sources` -- Base datasets
======================================

Readers for the balanced base datasets that long-tailed variants are built
from.
Each base lives in its own directory under the data root
(``INVLAB_DATA_DIR``), either in its official distribution format or in the
portable layout written by :func:`invlab.dataset.save_splits`:

- ``k49/``: ``k49-{train,test}-{imgs,labels}.npz`` (key ``arr_0``);
- ``cifar10/``: ``cifar-10-batches-py/`` (as read by torchvision);
- ``cifar100/``: ``cifar-100-python/``;
- ``gtsrb/``: ``gtsrb/GTSRB/...`` (as read by torchvision), resized to 32×32.

Nothing is downloaded. If a ``SHA256SUMS`` file is present in a base
directory (``sha256sum`` output format), every listed file is verified before
reading.
"""
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from PIL import Image
from torchvision import datasets as tv_datasets

from invlab.dataset import (
    MANIFEST_FILE,
    TEST,
    TRAIN,
    VALIDATION,
    DatasetFormatError,
    LabeledImageDataset,
    LaxPath,
    load_splits,
)
from invlab.longtail import DecayLaw, LongTailPlan, make_longtail_plan
from invlab.seeding import Stream, generator

CHECKSUMS_FILE = "SHA256SUMS"
GTSRB_SIZE = (32, 32)


@dataclass(frozen=True)
class BasePreset:
    """
    How a long-tailed variant of a base dataset is built by default.

    .. attribute:: validation_fraction

        Share of the official training set held out (before pruning) as a
        balanced validation split; 0 keeps no validation split.
    """

    name: str
    num_classes: int
    law: DecayLaw
    head_size: int
    floor: int
    validation_fraction: float = 0.0

    def plan(
        self, law: Optional[DecayLaw] = None, floor: Optional[int] = None
    ) -> LongTailPlan:
        return make_longtail_plan(
            self.num_classes,
            self.head_size,
            law or self.law,
            self.floor if floor is None else floor,
        )


PRESETS: Dict[str, BasePreset] = {
    "k49": BasePreset("k49", 49, DecayLaw.zipf(2.0), head_size=4828, floor=5),
    "gtsrb": BasePreset(
        "gtsrb", 43, DecayLaw.zipf(1.8), 1907, floor=5, validation_fraction=0.25
    ),
    "cifar10": BasePreset("cifar10", 10, DecayLaw.exponential(100), 5000, floor=1),
    "cifar100": BasePreset("cifar100", 100, DecayLaw.exponential(100), 500, floor=1),
}


def preset(name: str) -> BasePreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown base dataset {name!r}, expected one of {sorted(PRESETS)}"
        ) from None


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def verify_checksums(directory: LaxPath) -> int:
    """
    Checks every file listed in *directory*/``SHA256SUMS``.

    :return: the number of verified files (0 without a checksum file).
    :raise DatasetFormatError: on a missing file or a mismatch.
    """
    directory = Path(directory)
    sums_path = directory / CHECKSUMS_FILE
    if not sums_path.exists():
        logging.debug("no %s in %s, skipping verification", CHECKSUMS_FILE, directory)
        return 0
    n = 0
    for line in sums_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        expected, _, name = line.strip().partition(" ")
        path = directory / name.strip().lstrip("*")
        if not path.exists():
            raise DatasetFormatError(path, "listed in SHA256SUMS but missing")
        actual = _sha256(path)
        if actual != expected.lower():
            raise DatasetFormatError(path, f"sha256 {actual} != expected {expected}")
        n += 1
    logging.info("verified %d files in %s", n, directory)
    return n


def _npz_array(path: Path) -> np.ndarray:
    try:
        with np.load(path) as archive:
            return archive["arr_0"]
    except (OSError, KeyError, ValueError) as err:
        raise DatasetFormatError(path, err)


def read_k49(directory: LaxPath) -> Dict[str, LabeledImageDataset]:
    """Reads the Kuzushiji-49 ``.npz`` archives (28×28 grayscale, 49 classes)."""
    directory = Path(directory)
    splits = {}
    for split in (TRAIN, TEST):
        images = _npz_array(directory / f"k49-{split}-imgs.npz")
        labels = _npz_array(directory / f"k49-{split}-labels.npz")
        splits[split] = LabeledImageDataset(
            images=images.astype(np.uint8),
            labels=labels,
            num_classes=49,
            metadata={"name": "k49", "split": split},
        )
    return splits


def read_cifar(directory: LaxPath, num_classes: int) -> Dict[str, LabeledImageDataset]:
    """Reads CIFAR-10 or CIFAR-100 (32×32 RGB) with torchvision."""
    cls = {10: tv_datasets.CIFAR10, 100: tv_datasets.CIFAR100}[num_classes]
    splits = {}
    for split in (TRAIN, TEST):
        try:
            ds = cls(root=str(directory), train=split == TRAIN, download=False)
        except RuntimeError as err:
            raise DatasetFormatError(Path(directory), err)
        splits[split] = LabeledImageDataset(
            images=np.asarray(ds.data, dtype=np.uint8),
            labels=np.asarray(ds.targets),
            num_classes=num_classes,
            metadata={"name": f"cifar{num_classes}", "split": split},
        )
    return splits


def _resized(images: Iterable[Image.Image], size: Tuple[int, int]) -> np.ndarray:
    return np.stack(
        [np.asarray(im.convert("RGB").resize(size, Image.BILINEAR)) for im in images]
    )


def read_gtsrb(
    directory: LaxPath, size: Tuple[int, int] = GTSRB_SIZE
) -> Dict[str, LabeledImageDataset]:
    """Reads GTSRB (43 classes) with torchvision, resizing every image to *size*."""
    splits = {}
    for split in (TRAIN, TEST):
        try:
            ds = tv_datasets.GTSRB(root=str(directory), split=split, download=False)
        except RuntimeError as err:
            raise DatasetFormatError(Path(directory), err)
        pairs = [ds[i] for i in range(len(ds))]
        splits[split] = LabeledImageDataset(
            images=_resized((im for im, _ in pairs), size),
            labels=np.array([label for _, label in pairs]),
            num_classes=43,
            metadata={"name": "gtsrb", "split": split},
        )
    return splits


def split_validation(
    dataset: LabeledImageDataset, fraction: float, seed: int
) -> Tuple[LabeledImageDataset, LabeledImageDataset]:
    """
    Holds out a uniformly drawn *fraction* of *dataset* as a validation split.

    :return: ``(train, validation)``, each in the original example order.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"validation fraction must be in (0, 1), got {fraction}")
    n_val = round(fraction * len(dataset))
    perm = generator(seed, Stream.SPLIT).permutation(len(dataset))
    val = np.sort(perm[:n_val])
    train = np.sort(perm[n_val:])
    return (
        dataset.subset(train, split=TRAIN, validation_seed=seed),
        dataset.subset(val, split=VALIDATION, validation_seed=seed),
    )


_READERS = {
    "k49": read_k49,
    "cifar10": lambda d: read_cifar(d, 10),
    "cifar100": lambda d: read_cifar(d, 100),
    "gtsrb": read_gtsrb,
}


def load_base(
    name: str,
    data_dir: LaxPath,
    seed: int = 0,
    validation_fraction: Optional[float] = None,
) -> Dict[str, LabeledImageDataset]:
    """
    Reads base dataset *name* from *data_dir*/*name*, in portable layout if it
    has a ``manifest.json``, in its official format otherwise.
    A validation split is drawn (with *seed*) from the training split when
    the preset (or *validation_fraction*) asks for one and none exists.

    :raise DatasetFormatError: if the files are missing, corrupt, or fail
        checksum verification.
    """
    base = preset(name)
    directory = Path(data_dir) / name
    verify_checksums(directory)
    if (directory / MANIFEST_FILE).exists():
        splits = load_splits(directory)
    else:
        splits = _READERS[name](directory)
    for split in splits.values():
        split.metadata.setdefault("name", name)

    fraction = validation_fraction
    if fraction is None:
        fraction = base.validation_fraction
    if fraction and VALIDATION not in splits:
        splits[TRAIN], splits[VALIDATION] = split_validation(
            splits[TRAIN], fraction, seed
        )
    logging.info(
        "loaded %s: %s",
        name,
        ", ".join(f"{k} {len(v)}" for k, v in splits.items()),
    )
    return splits
