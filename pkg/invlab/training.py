"""
:mod:`invlab.training` -- Classifier training with generative augmentation
==========================================================================

One epoch of :func:`train_classifier`:

#. :func:`invlab.strategies.make_sampler` decides how examples are drawn and
   how classes are weighted;
#. for each batch, ``OnBatch`` plugins run (standard augmentations), then
   :func:`invlab.git.git_augment_batch`, then one SGD step on the configured
   loss, after normalization to the training set's channel statistics;
#. the model is evaluated on the validation split, and ``OnEpoch`` plugins
   see the epoch's :class:`EpochRecord`.

Learning rates warm up linearly, then decay by ``lr_decay`` at each milestone.
Every random decision comes from a stream keyed by the run seed and the
epoch and batch indices, so runs repeat bit-exactly on one CPU worker.
"""
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn

from invlab.backbones import build_backbone
from invlab.checkpoint import CLASSIFIER_FORMAT, load_checkpoint, save_checkpoint
from invlab.dataset import LabeledImageDataset
from invlab.git import (
    Batch,
    GitConfig,
    candidate_count,
    check_resolution,
    git_augment_batch,
)
from invlab.metrics import MetricError, balanced_accuracy, per_class_accuracy
from invlab.plugins import Contract, apply, group_by_contract
from invlab.plugins.contracts import Plugin
from invlab.seeding import Stream, derive_seed, generator
from invlab.strategies import Loss, StrategyConfig, check_finite, make_sampler

HISTORY_COLUMNS = ("epoch", "loss", "balanced_val_acc", "lr", "phase")
PREDICT_BATCH_SIZE = 512

# Channel standard deviations are floored at one intensity level.
MIN_STD = 1.0 / 255


class TrainingError(ValueError):
    """Raised when a dataset, a backbone and a schedule do not fit together."""


@dataclass(frozen=True)
class TrainSchedule:
    """
    .. attribute:: epochs

        Number of passes over the training set; 0 returns the initialized
        model.

    .. attribute:: milestones

        Epochs (0-based, strictly increasing, ``< epochs``) at which the
        learning rate is multiplied by :attr:`lr_decay`.

    .. attribute:: warmup_epochs

        Epochs of linear warm-up from ``lr / warmup_epochs`` to ``lr``.

    .. attribute:: plugins

        Dotted names of plugin modules enabled by this schedule.
    """

    epochs: int = 200
    batch_size: int = 128
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 2e-4
    milestones: Tuple[int, ...] = (160, 180)
    lr_decay: float = 0.1
    warmup_epochs: int = 5
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    plugins: Tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "plugins", tuple(self.plugins))
        if self.epochs < 0:
            raise TrainingError(f"epochs must be ≥ 0, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.lr <= 0:
            raise TrainingError(f"lr must be > 0, got {self.lr}")
        if self.warmup_epochs < 0:
            raise TrainingError(f"warmup_epochs must be ≥ 0, got {self.warmup_epochs}")
        m = self.milestones
        if any(a >= b for a, b in zip(m, m[1:])):
            raise TrainingError(f"milestones must be strictly increasing, got {m}")
        if m and (m[0] < 0 or m[-1] >= self.epochs):
            raise TrainingError(f"milestones must lie in [0, {self.epochs}), got {m}")
        self.strategy.check_epochs(self.epochs)

    def scaled(self, epochs: int) -> "TrainSchedule":
        """
        The same recipe over *epochs*: milestones, warm-up and the strategy's
        switch epoch keep their relative position.

        >>> s = PRESETS["k49"].scaled(10)
        >>> s.milestones, s.strategy.switch_epoch
        ((6, 8), 6)
        """
        if epochs == self.epochs:
            return self
        if self.epochs == 0:
            return replace(self, epochs=epochs, milestones=())

        def at(e: int) -> int:
            return int(round(e * epochs / self.epochs))

        milestones = tuple(sorted({at(m) for m in self.milestones if at(m) < epochs}))
        switch = min(at(self.strategy.switch_epoch), max(epochs - 1, 0))
        strategy = replace(self.strategy, switch_epoch=switch)
        return replace(
            self,
            epochs=epochs,
            milestones=milestones,
            warmup_epochs=min(self.warmup_epochs, at(self.warmup_epochs)),
            strategy=strategy,
        )

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["plugins"] = list(self.plugins)
        return d


def _preset(
    epochs: int, milestones: Tuple[int, int], warmup: int, plugins=()
) -> TrainSchedule:
    return TrainSchedule(
        epochs=epochs,
        milestones=milestones,
        warmup_epochs=warmup,
        strategy=StrategyConfig(switch_epoch=milestones[0]),
        plugins=plugins,
    )


_CIFAR_PLUGINS = ("invlab.plugins.flip", "invlab.plugins.crop")

PRESETS = {
    "k49": _preset(50, (30, 40), 0),
    "gtsrb": _preset(200, (160, 180), 5),
    "cifar10": _preset(200, (160, 180), 5, _CIFAR_PLUGINS),
    "cifar100": _preset(200, (160, 180), 5, _CIFAR_PLUGINS),
}


def schedule_preset(name: str) -> TrainSchedule:
    try:
        return PRESETS[name]
    except KeyError:
        raise TrainingError(
            f"unknown schedule preset {name!r}, expected one of {sorted(PRESETS)}"
        ) from None


def learning_rate(schedule: TrainSchedule, epoch: int) -> float:
    """
    >>> s = TrainSchedule(epochs=10, milestones=(6, 8), warmup_epochs=2)
    >>> [round(learning_rate(s, e), 6) for e in (0, 1, 5, 6, 9)]
    [0.05, 0.1, 0.1, 0.01, 0.001]
    """
    if epoch < schedule.warmup_epochs:
        return schedule.lr * (epoch + 1) / schedule.warmup_epochs
    decays = sum(1 for m in schedule.milestones if m <= epoch)
    return schedule.lr * schedule.lr_decay ** decays


def seeded_backbone(
    architecture: str, num_classes: int, input_shape: Tuple[int, int, int], seed: int
) -> nn.Module:
    """:func:`~invlab.backbones.build_backbone`, weights drawn from the run's stream."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, Stream.MODEL_INIT))
        return build_backbone(architecture, num_classes, input_shape)


@dataclass
class EpochRecord:
    """
    What happened during one epoch; ``OnEpoch`` plugins receive it and may
    return a modified copy (e.g. with extra entries in :attr:`extra`).
    """

    epoch: int
    loss: float
    balanced_val_acc: float
    lr: float
    phase: str
    generated: int = 0
    extra: Dict[str, Any] = field(default_factory=dict)

    def row(self) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in HISTORY_COLUMNS}


@dataclass
class TrainingHistory:
    records: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def to_frame(self) -> pd.DataFrame:
        rows = [r.row() for r in self.records]
        return pd.DataFrame(rows, columns=list(HISTORY_COLUMNS))

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)


class TrainedClassifier:
    """
    A trained backbone with its input normalization; implements
    :class:`invlab.metrics.Classifier`.
    """

    def __init__(
        self,
        model: nn.Module,
        mean: np.ndarray,
        std: np.ndarray,
        device: Union[str, torch.device] = "cpu",
    ) -> None:
        self.model = model.to(device)
        self.device = torch.device(device)
        self.mean = np.asarray(mean, dtype=np.float32)
        self.std = np.asarray(std, dtype=np.float32)
        self._mean = torch.as_tensor(self.mean, device=self.device).view(1, -1, 1, 1)
        self._std = torch.as_tensor(self.std, device=self.device).view(1, -1, 1, 1)

    @property
    def spec(self):
        return self.model.spec

    def inputs(self, images: np.ndarray) -> torch.Tensor:
        """Normalized ``(N, C, H, W)`` float tensor of uint8 *images*."""
        x = torch.as_tensor(np.array(images, dtype=np.uint8), device=self.device)
        x = x.permute(0, 3, 1, 2).to(torch.float32) / 255.0
        return (x - self._mean) / self._std

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[..., np.newaxis]
        self.model.eval()
        out = np.zeros((len(images), self.spec.num_classes), dtype=np.float64)
        with torch.no_grad():
            for start in range(0, len(images), PREDICT_BATCH_SIZE):
                chunk = images[start : start + PREDICT_BATCH_SIZE]
                logits = self.model(self.inputs(chunk))
                out[start : start + len(logits)] = (
                    torch.softmax(logits.double(), dim=1).cpu().numpy()
                )
        return out

    def save(self, path: Union[str, Path], **extra: Any) -> Path:
        spec = self.spec
        return save_checkpoint(
            path,
            CLASSIFIER_FORMAT,
            {
                "architecture": spec.architecture,
                "num_classes": spec.num_classes,
                "input_shape": list(spec.input_shape),
                "state_dict": self.model.state_dict(),
                "mean": self.mean.tolist(),
                "std": self.std.tolist(),
                **extra,
            },
        )

    @classmethod
    def load(
        cls, path: Union[str, Path], device: Union[str, torch.device] = "cpu"
    ) -> "TrainedClassifier":
        """
        :raise CheckpointFormatError: if *path* is not a classifier checkpoint.
        """
        payload = load_checkpoint(path, CLASSIFIER_FORMAT)
        model = build_backbone(
            payload["architecture"],
            payload["num_classes"],
            tuple(payload["input_shape"]),
        )
        model.load_state_dict(payload["state_dict"])
        return cls(model, np.array(payload["mean"]), np.array(payload["std"]), device)


def channel_statistics(dataset: LabeledImageDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and standard deviation of the images, in ``[0, 1]`` units."""
    c = dataset.image_shape[2]
    if len(dataset) == 0:
        return np.zeros(c), np.ones(c)
    pixels = dataset.images.reshape(-1, c).astype(np.float64) / 255.0
    return pixels.mean(axis=0), np.maximum(pixels.std(axis=0), MIN_STD)


def _check_fit(dataset: LabeledImageDataset, model: nn.Module) -> None:
    spec = getattr(model, "spec", None)
    if spec is None:
        raise TrainingError("backbones must come from build_backbone")
    if tuple(dataset.image_shape) != tuple(spec.input_shape):
        raise TrainingError(
            f"{dataset.name} images are {dataset.image_shape}, "
            f"the backbone expects {spec.input_shape}"
        )
    if dataset.num_classes != spec.num_classes:
        raise TrainingError(
            f"{dataset.name} has {dataset.num_classes} classes, "
            f"the backbone predicts {spec.num_classes}"
        )


def validation_accuracy(
    classifier: TrainedClassifier, validation: LabeledImageDataset
) -> float:
    """Balanced accuracy, over the classes present when some are missing."""
    try:
        return balanced_accuracy(classifier, validation)
    except MetricError:
        if len(validation) == 0:
            return float("nan")
        return float(np.nanmean(per_class_accuracy(classifier, validation)))


def epoch_order(
    plan_is_uniform: bool,
    probabilities: Optional[np.ndarray],
    n: int,
    seed: int,
    epoch: int,
) -> np.ndarray:
    """
    Example positions visited during *epoch*: a permutation for uniform
    epochs, ``n`` draws with replacement otherwise.
    """
    rng = generator(seed, Stream.SAMPLER, epoch)
    if plan_is_uniform:
        return rng.permutation(n)
    return rng.choice(n, size=n, replace=True, p=probabilities)


def train_classifier(
    dataset: LabeledImageDataset,
    backbone: nn.Module,
    schedule: TrainSchedule,
    git: GitConfig = GitConfig(),
    seed: int = 0,
    validation: Optional[LabeledImageDataset] = None,
    plugins: Sequence[Plugin] = (),
    device: Union[str, torch.device] = "cpu",
) -> Tuple[TrainedClassifier, TrainingHistory]:
    """
    Trains *backbone* on *dataset*.

    :param plugins: resolved plugin functions (see
        :func:`invlab.plugins.resolve`), applied in order.
    :raise TrainingError: if dataset and backbone do not fit.
    :raise ResolutionMismatchError: if the GIT generator was built for
        another resolution.
    :raise NonFiniteLossError: when a loss becomes NaN or infinite.
    """
    _check_fit(dataset, backbone)
    schedule.strategy.check_epochs(schedule.epochs)
    check_resolution(git, dataset.image_shape)

    mean, std = channel_statistics(dataset)
    classifier = TrainedClassifier(backbone, mean, std, device)
    history = TrainingHistory()
    if schedule.epochs == 0:
        return classifier, history
    if len(dataset) == 0:
        raise TrainingError(f"{dataset.name} has no training example")

    grouped = group_by_contract(plugins)
    on_batch, on_epoch = grouped[Contract.OnBatch], grouped[Contract.OnEpoch]
    model = classifier.model
    optimizer = torch.optim.SGD(
        model.parameters(),
        lr=schedule.lr,
        momentum=schedule.momentum,
        weight_decay=schedule.weight_decay,
    )
    sizes = dataset.class_sizes
    loss_fn = Loss(schedule.strategy, sizes)
    step = 0
    logging.info(
        "training %s on %s (%d examples) for %d epochs, %s%s",
        model.spec.architecture,
        dataset.name,
        len(dataset),
        schedule.epochs,
        schedule.strategy.label,
        git.label,
    )

    for epoch in range(schedule.epochs):
        lr = learning_rate(schedule, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        plan = make_sampler(schedule.strategy, sizes, epoch)
        probabilities = None
        if not plan.is_uniform:
            probabilities = plan.example_probabilities(dataset.labels)
        order = epoch_order(plan.is_uniform, probabilities, len(dataset), seed, epoch)

        model.train()
        losses, generated = [], 0
        for b, start in enumerate(range(0, len(order), schedule.batch_size)):
            idx = order[start : start + schedule.batch_size]
            batch = Batch(
                images=dataset.images[idx],
                labels=dataset.labels[idx],
                indices=idx,
                git_slots=candidate_count(len(idx), git.p) if git.enabled else 0,
            )
            batch = apply(on_batch, batch, generator(seed, Stream.AUGMENT, epoch, b))
            git_rng = generator(seed, Stream.GIT, epoch, b)
            batch = git_augment_batch(batch, sizes, git, git_rng)
            generated += int(batch.generated.sum())

            logits = model(classifier.inputs(batch.images))
            targets = torch.as_tensor(np.array(batch.labels), device=classifier.device)
            loss = loss_fn(logits, targets, plan.loss_weights)
            losses.append(
                check_finite(loss, step, epoch=epoch, batch=b, indices=idx.tolist())
            )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            step += 1

        record = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(losses)),
            balanced_val_acc=(
                validation_accuracy(classifier, validation)
                if validation is not None
                else float("nan")
            ),
            lr=lr,
            phase=plan.phase,
            generated=generated,
        )
        record = apply(on_epoch, record)
        history.records.append(record)
        logging.info(
            "epoch %d/%d: loss %.4f, balanced val acc %.4f, lr %g, %s, %d generated",
            epoch + 1,
            schedule.epochs,
            record.loss,
            record.balanced_val_acc,
            record.lr,
            record.phase,
            record.generated,
        )

    model.eval()
    return classifier, history

