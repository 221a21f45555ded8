"""
:mod:`invlab.strategies` -- Losses, resampling and reweighting
==============================================================

A :class:`StrategyConfig` pairs a loss (cross-entropy, Focal or LDAM) with a
schedule deciding, for each epoch, how examples are sampled and how classes
are weighted in the loss:

=========  ==================================  ==================================
schedule   sampling                            class weights
=========  ==================================  ==================================
``ERM``    uniform over examples               1
``RS``     uniform over classes                1
``CB_RS``  class ∝ 1 / effective number        1
``DRS``    ERM, then RS from ``switch_epoch``  1
``DRW``    uniform over examples               1, then class-balanced from
                                               ``switch_epoch``
``CB_RW``  uniform over examples               class-balanced
=========  ==================================  ==================================

Class-balanced weights are inverse effective numbers, normalized to mean 1.
"""
import enum
from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F


class StrategyError(ValueError):
    """Raised for invalid strategy hyper-parameters."""


class LossKind(enum.Enum):
    CE = "CE"
    FOCAL = "Focal"
    LDAM = "LDAM"


class Schedule(enum.Enum):
    ERM = "ERM"
    RS = "RS"
    CB_RS = "CB_RS"
    DRS = "DRS"
    DRW = "DRW"
    CB_RW = "CB_RW"


_DELAYED = (Schedule.DRS, Schedule.DRW)


@dataclass(frozen=True)
class StrategyConfig:
    """
    Loss and schedule of one training method.
    Field names are also the experiment config keys.

    .. attribute:: loss

        ``CE``, ``Focal`` or ``LDAM``.

    .. attribute:: gamma

        Focal focusing parameter ``γ ≥ 0``.

    .. attribute:: max_margin

        Largest LDAM margin, ``> 0``.

    .. attribute:: scale

        LDAM logit scale ``s``.

    .. attribute:: schedule

        One of :class:`Schedule`.

    .. attribute:: beta

        Effective-number parameter ``β ∈ [0, 1)``.

    .. attribute:: switch_epoch

        First epoch of the second phase of ``DRS`` and ``DRW``.
    """

    loss: str = "CE"
    gamma: float = 1.0
    max_margin: float = 0.5
    scale: float = 30.0
    schedule: str = "ERM"
    beta: float = 0.9999
    switch_epoch: int = 160

    def __post_init__(self) -> None:
        try:
            LossKind(self.loss)
            Schedule(self.schedule)
        except ValueError as err:
            raise StrategyError(str(err)) from None
        if not 0 <= self.beta < 1:
            raise StrategyError(f"beta must be in [0, 1), got {self.beta}")
        if self.gamma < 0:
            raise StrategyError(f"gamma must be ≥ 0, got {self.gamma}")
        if self.max_margin <= 0:
            raise StrategyError(f"max_margin must be > 0, got {self.max_margin}")
        if self.scale <= 0:
            raise StrategyError(f"scale must be > 0, got {self.scale}")
        if self.switch_epoch < 0:
            raise StrategyError(f"switch_epoch must be ≥ 0, got {self.switch_epoch}")

    @property
    def loss_kind(self) -> LossKind:
        return LossKind(self.loss)

    @property
    def schedule_kind(self) -> Schedule:
        return Schedule(self.schedule)

    @property
    def label(self) -> str:
        """
        >>> StrategyConfig(loss="LDAM", schedule="DRS").label
        'LDAM+DRS'
        >>> StrategyConfig().label
        'ERM'
        """
        if self.schedule_kind is Schedule.ERM:
            return "ERM" if self.loss_kind is LossKind.CE else self.loss
        return f"{self.loss}+{self.schedule}"

    def check_epochs(self, epochs: int) -> None:
        """
        :raise StrategyError: if a delayed schedule would never switch.
        """
        delayed = self.schedule_kind in _DELAYED
        if delayed and epochs > 0 and self.switch_epoch >= epochs:
            raise StrategyError(
                f"switch_epoch ({self.switch_epoch}) must be < epochs ({epochs})"
            )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "StrategyConfig":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in names})


def effective_number(n, beta: float):
    """
    ``(1 − β^n) / (1 − β)``, elementwise for arrays.

    >>> float(effective_number(1, 0.9999))
    1.0

    :raise StrategyError: unless ``0 ≤ β < 1``.
    """
    if not 0 <= beta < 1:
        raise StrategyError(f"beta must be in [0, 1), got {beta}")
    n = np.asarray(n, dtype=np.float64)
    if np.any(n < 0):
        raise StrategyError("class sizes must be ≥ 0")
    return (1.0 - np.power(beta, n)) / (1.0 - beta)


@dataclass(frozen=True)
class ClassWeights:
    """Positive per-class loss weights with mean 1."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise StrategyError(f"class weights must be positive and finite: {weights}")
        weights.flags.writeable = False
        object.__setattr__(self, "weights", weights)

    @classmethod
    def ones(cls, num_classes: int) -> "ClassWeights":
        return cls(np.ones(num_classes))

    def tensor(self, device: Optional[torch.device] = None) -> torch.Tensor:
        return torch.as_tensor(self.weights, dtype=torch.float32, device=device)


def class_weights(class_sizes: Sequence[int], beta: float) -> ClassWeights:
    """
    Weights ∝ 1 / effective number of each class, renormalized to mean 1.

    >>> class_weights([7, 7, 7], 0.9999).weights.tolist()
    [1.0, 1.0, 1.0]

    :raise StrategyError: if a class is empty.
    """
    sizes = np.asarray(class_sizes)
    if np.any(sizes < 1):
        raise StrategyError(
            f"every class needs ≥ 1 example, got sizes {sizes.tolist()}"
        )
    raw = 1.0 / effective_number(sizes, beta)
    return ClassWeights(raw * len(raw) / raw.sum())


def _weighted_mean(
    per_example: torch.Tensor, labels: torch.Tensor, weights: Optional[torch.Tensor]
) -> torch.Tensor:
    if weights is not None:
        per_example = per_example * weights.to(per_example)[labels]
    return per_example.mean()


def cross_entropy(
    logits: torch.Tensor, labels: torch.Tensor, weights: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Mean of per-example cross-entropies, each scaled by its class weight."""
    losses = F.cross_entropy(logits, labels, reduction="none")
    return _weighted_mean(losses, labels, weights)


def focal_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    gamma: float,
    weights: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    ``−(1 − p_t)^γ log p_t`` averaged over the batch, with ``p_t`` the
    softmax probability of the true label; cross-entropy at ``γ = 0``.

    >>> round(float(focal_loss(torch.zeros(1, 2), torch.tensor([0]), 1.0)), 4)
    0.3466
    """
    log_pt = F.log_softmax(logits, dim=-1).gather(1, labels.unsqueeze(1)).squeeze(1)
    focusing = (1 - log_pt.exp()).clamp(min=0) ** gamma
    return _weighted_mean(-focusing * log_pt, labels, weights)


def ldam_margins(class_sizes: Sequence[int], max_margin: float) -> np.ndarray:
    """
    Per-class margins ∝ ``n_j^(−1/4)``, the largest being *max_margin*.

    >>> ldam_margins([16, 256], 0.5).tolist()
    [0.5, 0.25]
    """
    sizes = np.asarray(class_sizes, dtype=np.float64)
    if np.any(sizes < 1):
        raise StrategyError(
            f"every class needs ≥ 1 example, got sizes {sizes.tolist()}"
        )
    margins = sizes ** -0.25
    return margins * (max_margin / margins.max())


def ldam_loss(
    logits: torch.Tensor,
    labels: torch.Tensor,
    class_sizes: Sequence[int],
    max_margin: float = 0.5,
    scale: float = 30.0,
    weights: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Cross-entropy on ``scale · (z − Δ_y · onehot(y))``."""
    margins = torch.as_tensor(
        ldam_margins(class_sizes, max_margin), dtype=logits.dtype, device=logits.device
    )
    onehot = F.one_hot(labels, logits.shape[-1]).to(logits.dtype)
    shifted = logits - onehot * margins[labels].unsqueeze(1)
    return cross_entropy(scale * shifted, labels, weights)


class Loss:
    """The loss of a :class:`StrategyConfig` bound to class sizes."""

    def __init__(self, config: StrategyConfig, class_sizes: Sequence[int]) -> None:
        self.config = config
        self.class_sizes = np.maximum(np.asarray(class_sizes), 1)

    def __call__(
        self,
        logits: torch.Tensor,
        labels: torch.Tensor,
        weights: Optional[ClassWeights] = None,
    ) -> torch.Tensor:
        w = weights.tensor(logits.device) if weights is not None else None
        kind = self.config.loss_kind
        if kind is LossKind.FOCAL:
            return focal_loss(logits, labels, self.config.gamma, w)
        if kind is LossKind.LDAM:
            return ldam_loss(
                logits,
                labels,
                self.class_sizes,
                self.config.max_margin,
                self.config.scale,
                w,
            )
        return cross_entropy(logits, labels, w)


@dataclass(frozen=True)
class SamplingPlan:
    """
    What one epoch of training does about imbalance.

    .. attribute:: class_probabilities

        Probability of drawing each class; examples within a class are
        equally likely.

    .. attribute:: loss_weights

        :class:`ClassWeights` to apply in the loss, or :any:`None`.

    .. attribute:: phase

        ``"erm"``, ``"resample"`` (class-balanced draws) or ``"reweight"``
        (uniform draws, class-balanced loss weights). Delayed schedules
        change phase at ``switch_epoch``.
    """

    class_probabilities: np.ndarray
    loss_weights: Optional[ClassWeights]
    phase: str

    @property
    def is_uniform(self) -> bool:
        """Whether every example is equally likely."""
        return self.phase != "resample"

    def example_probabilities(self, labels: Sequence[int]) -> np.ndarray:
        """Per-example probabilities (summing to 1) for a training set."""
        labels = np.asarray(labels)
        counts = np.bincount(labels, minlength=len(self.class_probabilities))
        per_class = np.divide(
            self.class_probabilities,
            counts,
            out=np.zeros_like(self.class_probabilities),
            where=counts > 0,
        )
        p = per_class[labels]
        return p / p.sum()


def _normalized(x: np.ndarray) -> np.ndarray:
    return x / x.sum()


def make_sampler(
    config: StrategyConfig, class_sizes: Sequence[int], epoch: int
) -> SamplingPlan:
    """
    The sampling distribution and loss weights of *epoch* (0-based).

    >>> make_sampler(StrategyConfig(schedule="RS"), [10, 90], 0).class_probabilities.tolist()
    [0.5, 0.5]
    """
    if epoch < 0:
        raise StrategyError(f"epoch must be ≥ 0, got {epoch}")
    sizes = np.asarray(class_sizes, dtype=np.float64)
    present = (sizes > 0).astype(np.float64)
    schedule = config.schedule_kind
    switched = epoch >= config.switch_epoch

    erm = SamplingPlan(_normalized(sizes), None, "erm")
    if schedule is Schedule.ERM or (schedule is Schedule.DRS and not switched):
        return erm
    if schedule in (Schedule.RS, Schedule.DRS):
        return SamplingPlan(_normalized(present), None, "resample")
    if schedule is Schedule.CB_RS:
        eff = effective_number(sizes, config.beta)
        inverse = np.divide(present, eff, out=np.zeros_like(eff), where=eff > 0)
        return SamplingPlan(_normalized(inverse), None, "resample")
    if schedule is Schedule.DRW and not switched:
        return SamplingPlan(
            erm.class_probabilities, ClassWeights.ones(len(sizes)), "erm"
        )
    return SamplingPlan(
        erm.class_probabilities,
        class_weights(np.maximum(sizes, 1), config.beta),
        "reweight",
    )


class NonFiniteLossError(RuntimeError):  # noqa: B903
    """
    Raised when a training loss becomes NaN or infinite; *provenance*
    describes the offending batch (epoch, step, example indices...).
    """

    def __init__(self, step: int, provenance: Mapping[str, Any]) -> None:
        super().__init__(f"non-finite loss at step {step}: {dict(provenance)}")
        self.step = step
        self.provenance = dict(provenance)


def check_finite(loss: torch.Tensor, step: int, **provenance: Any) -> float:
    """
    :return: the loss as a Python float.
    :raise NonFiniteLossError: if it is NaN or infinite.
    """
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NonFiniteLossError(step, {"loss": value, **provenance})
    return value
