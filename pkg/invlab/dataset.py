"""
:mod:`invlab.dataset` -- Labeled image datasets and their storage
=================================================================

A :class:`LabeledImageDataset` is an immutable array of 8-bit images
(``N × H × W × C``) with integer labels.
Datasets are persisted in a portable layout readable from any language:

.. code-block:: text

    DIR/
      manifest.json      # name, splits, num_classes, shape, plan, seeds, sizes
      labels.csv         # split,file,label
      train/000000.png
      train/000001.png
      ...
      test/000000.png

A single split can also be packed in one binary file (see :func:`write_packed`).
"""
import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pendulum
from PIL import Image

TRAIN = "train"
VALIDATION = "val"
TEST = "test"
SPLITS = (TRAIN, VALIDATION, TEST)

MANIFEST_FILE = "manifest.json"
LABELS_FILE = "labels.csv"
TRANSFORMS_FILE = "transforms.json"

PACKED_MAGIC = b"INVLAB01"
PACKED_HEADER = struct.Struct("<8sIIII")

LaxPath = Union[str, Path]


class DatasetError(ValueError):  # noqa: B903
    """
    Raised when arrays cannot form a consistent :class:`LabeledImageDataset`.
    """

    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class DatasetFormatError(ValueError):  # noqa: B903
    """
    Raised when a dataset directory or file cannot be read, or when a file
    does not match its expected checksum.
    """

    def __init__(self, path: Path, reason: Union[Exception, str]) -> None:
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


@dataclass(frozen=True, eq=False)
class LabeledImageDataset:
    """
    Images with integer labels in ``[0, num_classes)``.

    .. attribute:: images

        :class:`numpy.ndarray` of :any:`numpy.uint8`, shape ``(N, H, W, C)``.
        Grayscale images have ``C == 1``.

    .. attribute:: labels

        :class:`numpy.ndarray` of :any:`numpy.int64`, shape ``(N,)``.

    .. attribute:: num_classes

        :any:`int` -- Number of classes, including classes without examples.

    .. attribute:: metadata

        :any:`dict` -- Free-form provenance: ``name``, ``split``, ``seed``,
        plan, actual sizes, drawn transform parameters...

    Both arrays are made read-only, so a built dataset can be shared
    between threads.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    metadata: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        images = np.asarray(self.images)
        if images.ndim == 3:
            images = images[..., np.newaxis]
        if images.ndim != 4:
            raise DatasetError(f"images must be N×H×W×C, got shape {images.shape}")
        if images.dtype != np.uint8:
            raise DatasetError(f"images must be 8-bit, got {images.dtype}")
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if len(labels) != len(images):
            raise DatasetError(
                f"{len(labels)} labels for {len(images)} images"
            )
        if self.num_classes < 1:
            raise DatasetError(f"num_classes must be positive, got {self.num_classes}")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DatasetError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got [{labels.min()}, {labels.max()}]"
            )
        images = np.ascontiguousarray(images)
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def class_sizes(self) -> np.ndarray:
        """Number of examples of each class, zeros included."""
        return np.bincount(self.labels, minlength=self.num_classes)

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        """``(H, W, C)`` shared by every image."""
        return tuple(self.images.shape[1:])

    @property
    def name(self) -> str:
        return self.metadata.get("name", "unnamed")

    @property
    def split(self) -> Optional[str]:
        return self.metadata.get("split")

    def class_indices(self, j: int) -> np.ndarray:
        """Positions of the examples of class *j*, in increasing order."""
        return np.flatnonzero(self.labels == j)

    def subset(self, indices: Sequence[int], **metadata: Any) -> "LabeledImageDataset":
        """
        A new dataset made of the examples at *indices* (in that order),
        with *metadata* merged over the current metadata.
        """
        indices = np.asarray(indices, dtype=np.int64)
        records = self.metadata.get("transforms")
        if isinstance(records, list) and len(records) == len(self):
            metadata = {"transforms": [records[i] for i in indices], **metadata}
        return LabeledImageDataset(
            images=self.images[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
            metadata={**self.metadata, **metadata},
        )

    def with_images(self, images: np.ndarray, **metadata: Any) -> "LabeledImageDataset":
        """A new dataset with the same labels but other *images*."""
        return LabeledImageDataset(
            images=images,
            labels=self.labels,
            num_classes=self.num_classes,
            metadata={**self.metadata, **metadata},
        )


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    return value


def save_splits(
    directory: LaxPath,
    splits: Mapping[str, LabeledImageDataset],
    extra: Optional[Mapping[str, Any]] = None,
) -> Path:
    """
    Writes *splits* (e.g. ``{"train": ..., "test": ...}``) to *directory* in
    the portable layout, along with a ``manifest.json`` describing each split
    and any *extra* provenance (plan, seeds...).

    :return: the path of the written manifest.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    num_classes = {d.num_classes for d in splits.values()}
    if len(num_classes) != 1:
        raise DatasetError(f"splits disagree on num_classes: {sorted(num_classes)}")

    rows = []
    for split_name, dataset in splits.items():
        split_dir = directory / split_name
        split_dir.mkdir(exist_ok=True)
        for i, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
            file_name = f"{split_name}/{i:06d}.png"
            _image_to_pil(image).save(directory / file_name)
            rows.append((split_name, file_name, int(label)))
        if "transforms" in dataset.metadata:
            (split_dir / TRANSFORMS_FILE).write_text(
                json.dumps(_jsonable(dataset.metadata["transforms"])), encoding="utf-8"
            )

    with (directory / LABELS_FILE).open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(("split", "file", "label"))
        writer.writerows(rows)

    manifest = {
        "created_at": pendulum.now("UTC").to_iso8601_string(),
        "num_classes": num_classes.pop(),
        "splits": {
            split_name: {
                "size": len(dataset),
                "image_shape": list(dataset.image_shape),
                "class_sizes": dataset.class_sizes.tolist(),
                "metadata": _jsonable(
                    {k: v for k, v in dataset.metadata.items() if k != "transforms"}
                ),
            }
            for split_name, dataset in splits.items()
        },
        **_jsonable(dict(extra or {})),
    }
    manifest_path = directory / MANIFEST_FILE
    manifest_path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    logging.info(
        "wrote %s (%s)",
        directory,
        ", ".join(f"{k}: {len(v)} examples" for k, v in splits.items()),
    )
    return manifest_path


def read_manifest(directory: LaxPath) -> Dict[str, Any]:
    """
    :raise DatasetFormatError: if the manifest is missing or not JSON.
    """
    path = Path(directory) / MANIFEST_FILE
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as err:
        raise DatasetFormatError(path, err)


def load_splits(directory: LaxPath) -> Dict[str, LabeledImageDataset]:
    """
    Reads every split of a dataset written by :func:`save_splits`.

    :raise DatasetFormatError: if the layout is incomplete or corrupt.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    labels_path = directory / LABELS_FILE
    by_split: Dict[str, list] = {}
    try:
        with labels_path.open(newline="", encoding="utf-8") as f:
            for row in csv.DictReader(f):
                by_split.setdefault(row["split"], []).append(
                    (row["file"], int(row["label"]))
                )
    except (OSError, KeyError, ValueError) as err:
        raise DatasetFormatError(labels_path, err)

    splits = {}
    for split_name, entries in by_split.items():
        try:
            images = [np.asarray(Image.open(directory / name)) for name, _ in entries]
        except OSError as err:
            raise DatasetFormatError(directory / split_name, err)
        split_info = manifest.get("splits", {}).get(split_name, {})
        shape = tuple(split_info.get("image_shape", ()))
        stacked = np.stack(images) if images else np.zeros((0, *shape), np.uint8)
        if stacked.ndim == 3:
            stacked = stacked[..., np.newaxis]
        if "num_classes" not in manifest:
            raise DatasetFormatError(directory / MANIFEST_FILE, "missing num_classes")
        metadata = {**split_info.get("metadata", {}), "split": split_name}
        transforms_path = directory / split_name / TRANSFORMS_FILE
        if transforms_path.exists():
            metadata["transforms"] = json.loads(transforms_path.read_text("utf-8"))
        splits[split_name] = LabeledImageDataset(
            images=stacked,
            labels=np.array([label for _, label in entries], dtype=np.int64),
            num_classes=manifest["num_classes"],
            metadata=metadata,
        )
    return splits


def load_split(directory: LaxPath, split: str) -> LabeledImageDataset:
    """
    :raise DatasetFormatError: if *directory* has no split named *split*.
    """
    splits = load_splits(directory)
    try:
        return splits[split]
    except KeyError:
        raise DatasetFormatError(
            Path(directory), f"no {split!r} split (found {sorted(splits)})"
        ) from None


def _image_to_pil(image: np.ndarray) -> Image.Image:
    if image.shape[-1] == 1:
        return Image.fromarray(image[..., 0])
    return Image.fromarray(image)


def write_packed(path: LaxPath, dataset: LabeledImageDataset) -> None:
    """
    Writes one split as a single binary file:

    - header: the 8 bytes ``INVLAB01``, then ``H``, ``W``, ``C``, ``N`` as
      little-endian unsigned 32-bit integers;
    - ``N × H × W × C`` image bytes in row-major order;
    - ``N`` labels as little-endian signed 32-bit integers.
    """
    h, w, c = dataset.image_shape
    with Path(path).open("wb") as f:
        f.write(PACKED_HEADER.pack(PACKED_MAGIC, h, w, c, len(dataset)))
        f.write(dataset.images.tobytes(order="C"))
        f.write(dataset.labels.astype("<i4").tobytes())


def read_packed(
    path: LaxPath, num_classes: Optional[int] = None, **metadata: Any
) -> LabeledImageDataset:
    """
    Reads a file written by :func:`write_packed`.
    Unless given, *num_classes* is one more than the largest label.

    :raise DatasetFormatError: if the header or the payload size is wrong.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < PACKED_HEADER.size:
        raise DatasetFormatError(path, "truncated header")
    magic, h, w, c, n = PACKED_HEADER.unpack_from(data)
    if magic != PACKED_MAGIC:
        raise DatasetFormatError(path, f"bad magic {magic!r}")
    image_bytes = n * h * w * c
    expected = PACKED_HEADER.size + image_bytes + 4 * n
    if len(data) != expected:
        raise DatasetFormatError(path, f"expected {expected} bytes, got {len(data)}")
    offset = PACKED_HEADER.size
    images = np.frombuffer(data, np.uint8, image_bytes, offset).reshape(n, h, w, c)
    labels = np.frombuffer(data, "<i4", n, offset + image_bytes).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 1
    return LabeledImageDataset(
        images=images.copy(), labels=labels, num_classes=num_classes, metadata=metadata
    )
