"""
:mod:`invlab.nuisance` -- Nuisance transformation families
==========================================================

A :class:`TransformDistribution` is a sampleable distribution ``T(·|x)`` over
nuisance transformations of an image ``x``.
Sampling is split in two steps so that any sample can be replayed exactly:

#. :meth:`TransformDistribution.draw` draws a parameter vector, returned as a
   :class:`TransformRecord` (serializable to JSON);
#. :meth:`TransformDistribution.apply` applies those parameters to an image.

Four families are supported:

- **rotation** about the image center by ``θ ~ Unif[0, 2π)``, bilinear
  interpolation, zero fill;
- **background**: ``max(x, b)`` with ``b ~ Unif{0, …, 100}`` (grayscale only);
- **dilation_erosion**: with probability 0.6 a grey dilation (max filter)
  with an ``n × n`` window, ``n ~ Unif{2, 3, 4}``, otherwise a grey erosion
  (min filter) with an ``m × m`` window, ``m ~ Unif{1, 2}``;
- **identity**.

Morphology pads with the operation's neutral element (0 for dilation, 255 for
erosion).
Even-sized windows are anchored at their top-left pixel: the output at
``(i, j)`` covers input rows ``i … i+n-1`` and columns ``j … j+n-1``.
Odd-sized windows are centered.
"""
import enum
import json
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import (
    Any,
    Callable,
    Mapping,
    NamedTuple,
    Optional,
    Protocol,
    Sequence,
)

import numpy as np
from scipy import ndimage

MAX_INTENSITY = 255

# Input coordinates closer than this to an integer are snapped to it, so that
# quarter turns are exact index permutations despite cos(π/2) != 0 in floats.
SNAP_TOLERANCE = 1e-9


class Family(enum.Enum):
    """Supported nuisance transformation families."""

    ROTATION = "rotation"
    BACKGROUND = "background"
    DILATION_EROSION = "dilation_erosion"
    IDENTITY = "identity"
    #: Learned transformations (:mod:`invlab.miitn`); parameters hold the style code.
    MIITN = "miitn"


#: Short names accepted on the command line.
ALIASES = MappingProxyType(
    {
        "rot": Family.ROTATION,
        "bg": Family.BACKGROUND,
        "dil": Family.DILATION_EROSION,
        "none": Family.IDENTITY,
        **{f.value: f for f in Family if f is not Family.MIITN},
    }
)

DEFAULT_PARAMETERS = MappingProxyType(
    {
        Family.ROTATION: MappingProxyType({"low": 0.0, "high": 2 * math.pi}),
        Family.BACKGROUND: MappingProxyType({"low": 0, "high": 100}),
        Family.DILATION_EROSION: MappingProxyType(
            {"p_dilate": 0.6, "dilation_sizes": (2, 3, 4), "erosion_sizes": (1, 2)}
        ),
        Family.IDENTITY: MappingProxyType({}),
        Family.MIITN: MappingProxyType({}),
    }
)


class TransformError(ValueError):
    """
    Raised when a transformation family cannot be applied to an image
    (e.g. background variation on an RGB image), or when a family name is
    unknown.
    """


@dataclass(frozen=True)
class TransformRecord:
    """
    One drawn parameter vector: enough to replay a sample exactly.

    .. attribute:: family

        :class:`Family` of the transformation.

    .. attribute:: parameters

        :any:`dict` -- ``{"theta": float}`` for rotation, ``{"b": int}`` for
        background, ``{"op": "dilate" | "erode", "size": int}`` for
        dilation_erosion, ``{}`` for identity.

    .. attribute:: seed
        :annotation: = None

        Optional identity of the random stream the parameters were drawn
        from (master seed followed by stream keys).
    """

    family: Family
    parameters: Mapping[str, Any] = field(default_factory=dict)
    seed: Optional[Sequence[int]] = None

    def to_dict(self) -> dict:
        return {
            "family": self.family.value,
            "parameters": dict(self.parameters),
            "seed": list(self.seed) if self.seed is not None else None,
        }

    def to_json(self) -> str:
        """
        >>> TransformRecord(Family.BACKGROUND, {"b": 80}).to_json()
        '{"family": "background", "parameters": {"b": 80}, "seed": null}'
        """
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TransformRecord":
        seed = d.get("seed")
        return cls(
            family=Family(d["family"]),
            parameters=dict(d.get("parameters", {})),
            seed=tuple(seed) if seed is not None else None,
        )

    @classmethod
    def from_json(cls, s: str) -> "TransformRecord":
        return cls.from_dict(json.loads(s))


class Sampled(NamedTuple):
    """An image drawn from ``T(·|x)`` along with the parameters used."""

    image: np.ndarray
    record: TransformRecord


class ImageSampler(Protocol):
    """Anything that draws ``x' ~ T(·|x)``: a TransformDistribution or a MIITN."""

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> Sampled:
        ...


def _as_channels(x: np.ndarray) -> np.ndarray:
    """View an H×W or H×W×C image as H×W×C."""
    return x[..., np.newaxis] if x.ndim == 2 else x


def _restore(out: np.ndarray, like: np.ndarray) -> np.ndarray:
    out = out.reshape(like.shape)
    if like.dtype == np.uint8:
        return np.clip(np.rint(out), 0, MAX_INTENSITY).astype(np.uint8)
    return out.astype(like.dtype, copy=False)


def rotate(x: np.ndarray, theta: float) -> np.ndarray:
    """
    Rotates *x* by *theta* radians about its center (counterclockwise as
    displayed, rows pointing down), with bilinear interpolation and zero fill.

    At ``θ = π/2`` on a square image this is exactly :func:`numpy.rot90`.

    >>> x = np.arange(9, dtype=np.uint8).reshape(3, 3)
    >>> bool((rotate(x, math.pi / 2) == np.rot90(x)).all())
    True
    """
    x = np.asarray(x)
    if theta == 0:
        return x.copy()
    h, w = x.shape[:2]
    center = np.array([(h - 1) / 2, (w - 1) / 2])
    cos, sin = math.cos(theta), math.sin(theta)
    matrix = np.array([[cos, sin], [-sin, cos]])
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    out_coords = np.stack([rows.ravel(), cols.ravel()]) - center[:, np.newaxis]
    in_coords = matrix @ out_coords + center[:, np.newaxis]
    snapped = np.round(in_coords)
    near = np.abs(in_coords - snapped) < SNAP_TOLERANCE
    in_coords = np.where(near, snapped, in_coords)

    channels = _as_channels(x).astype(np.float64)
    out = np.stack(
        [
            ndimage.map_coordinates(
                channels[..., k], in_coords, order=1, mode="constant", cval=0.0
            ).reshape(h, w)
            for k in range(channels.shape[-1])
        ],
        axis=-1,
    )
    return _restore(out, like=x)


def replace_background(x: np.ndarray, b: int) -> np.ndarray:
    """
    Raises every pixel darker than *b* to *b* (elementwise ``max(x, b)``),
    which replaces a black background by intensity *b*.

    >>> replace_background(np.array([[0, 50, 150]], np.uint8), 80).tolist()
    [[80, 80, 150]]

    :raise TransformError: if *x* has more than one channel.
    """
    x = np.asarray(x)
    if x.ndim == 3 and x.shape[-1] != 1:
        raise TransformError(
            f"background variation needs a grayscale image, got shape {x.shape}"
        )
    return np.maximum(x, np.asarray(b).astype(x.dtype))


def _window_origin(size: int) -> int:
    # scipy centers windows at index size // 2; shift even windows to start
    # at the output pixel instead.
    return -(size // 2) if size % 2 == 0 else 0


def _morphology(x: np.ndarray, size: int, filter_fn, pad_value: float) -> np.ndarray:
    x = np.asarray(x)
    if size < 1:
        raise TransformError(f"window size must be positive, got {size}")
    if size == 1:
        return x.copy()
    channels = _as_channels(x)
    origin = _window_origin(size)
    out = filter_fn(
        channels,
        size=(size, size, 1),
        mode="constant",
        cval=pad_value,
        origin=(origin, origin, 0),
    )
    return out.reshape(x.shape)


def dilate(x: np.ndarray, size: int) -> np.ndarray:
    """
    Grey dilation: maximum over a ``size × size`` window, zero padding.

    >>> x = np.zeros((4, 4), np.uint8); x[2, 2] = 255
    >>> np.argwhere(dilate(x, 2) == 255).tolist()
    [[1, 1], [1, 2], [2, 1], [2, 2]]
    """
    return _morphology(x, size, ndimage.maximum_filter, 0)


def erode(x: np.ndarray, size: int) -> np.ndarray:
    """Grey erosion: minimum over a ``size × size`` window, 255 padding."""
    return _morphology(x, size, ndimage.minimum_filter, MAX_INTENSITY)


def draw_rotation(
    rng: np.random.Generator, low: float = 0.0, high: float = 2 * math.pi
) -> TransformRecord:
    """An angle ``θ ~ Unif[low, high)``."""
    return TransformRecord(Family.ROTATION, {"theta": float(rng.uniform(low, high))})


def draw_background(
    rng: np.random.Generator, low: int = 0, high: int = 100
) -> TransformRecord:
    """A background level ``b ~ Unif{low, …, high}``."""
    return TransformRecord(Family.BACKGROUND, {"b": int(rng.integers(low, high + 1))})


def draw_dilation_erosion(
    rng: np.random.Generator,
    p_dilate: float = 0.6,
    dilation_sizes: Sequence[int] = (2, 3, 4),
    erosion_sizes: Sequence[int] = (1, 2),
) -> TransformRecord:
    """A dilation with probability *p_dilate*, an erosion otherwise."""
    if rng.random() < p_dilate:
        op, size = "dilate", int(rng.choice(dilation_sizes))
    else:
        op, size = "erode", int(rng.choice(erosion_sizes))
    return TransformRecord(Family.DILATION_EROSION, {"op": op, "size": size})


_DRAWERS: Mapping[Family, Callable[..., TransformRecord]] = MappingProxyType(
    {
        Family.ROTATION: draw_rotation,
        Family.BACKGROUND: draw_background,
        Family.DILATION_EROSION: draw_dilation_erosion,
    }
)


def _sampled(x: np.ndarray, record: TransformRecord) -> Sampled:
    return Sampled(apply_record(x, record), record)


def sample_rotation(
    x: np.ndarray,
    rng: np.random.Generator,
    low: float = 0.0,
    high: float = 2 * math.pi,
) -> Sampled:
    """Rotates *x* by an angle ``θ ~ Unif[low, high)``."""
    return _sampled(x, draw_rotation(rng, low, high))


def sample_background(
    x: np.ndarray, rng: np.random.Generator, low: int = 0, high: int = 100
) -> Sampled:
    """
    Replaces the background of *x* by ``b ~ Unif{low, …, high}``.

    :raise TransformError: if *x* is not grayscale.
    """
    return _sampled(x, draw_background(rng, low, high))


def sample_dilation_erosion(
    x: np.ndarray,
    rng: np.random.Generator,
    p_dilate: float = 0.6,
    dilation_sizes: Sequence[int] = (2, 3, 4),
    erosion_sizes: Sequence[int] = (1, 2),
) -> Sampled:
    """Dilates *x* with probability *p_dilate*, erodes it otherwise."""
    record = draw_dilation_erosion(rng, p_dilate, dilation_sizes, erosion_sizes)
    return _sampled(x, record)


@dataclass(frozen=True)
class TransformDistribution:
    """
    A distribution ``T(·|x)`` over nuisance transformations.

    Random streams are supplied per call (see :mod:`invlab.seeding`), which
    keeps distributions stateless and safe to share between workers.

    .. attribute:: family

        :class:`Family` of the transformations.

    .. attribute:: parameters

        Family-specific ranges, see :data:`DEFAULT_PARAMETERS`. Missing keys
        take their default value.
    """

    family: Family
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        defaults = DEFAULT_PARAMETERS[self.family]
        unknown = set(self.parameters) - set(defaults)
        if unknown:
            raise TransformError(
                f"unknown {self.family.value} parameters {sorted(unknown)}"
            )
        merged = {**defaults, **dict(self.parameters)}
        object.__setattr__(self, "parameters", MappingProxyType(merged))

    @classmethod
    def from_name(cls, name: str, **parameters: Any) -> "TransformDistribution":
        """
        :param name: a :class:`Family` value or one of the :data:`ALIASES`
            (``rot``, ``bg``, ``dil``, ``none``).
        :raise TransformError: if *name* is unknown.
        """
        try:
            family = ALIASES[name]
        except KeyError:
            raise TransformError(
                f"unknown transform family {name!r}, expected one of {sorted(ALIASES)}"
            ) from None
        return cls(family, parameters)

    @property
    def is_identity(self) -> bool:
        return self.family is Family.IDENTITY

    def draw(self, rng: np.random.Generator) -> TransformRecord:
        """Draws a parameter vector without touching any image."""
        if self.family in _DRAWERS:
            return _DRAWERS[self.family](rng, **self.parameters)
        if self.family is Family.MIITN:
            raise TransformError(
                "learned transformations are sampled from a MIITN model"
            )
        return TransformRecord(self.family, {})

    def apply(self, x: np.ndarray, record: TransformRecord) -> np.ndarray:
        """
        Applies the parameters of *record* to *x*.

        :raise TransformError: if *record* belongs to another family, or the
            family cannot handle *x*.
        """
        if record.family is not self.family:
            raise TransformError(
                f"cannot apply a {record.family.value} record "
                f"with a {self.family.value} distribution"
            )
        return apply_record(x, record)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> Sampled:
        """Draws ``x' ~ T(·|x)``."""
        record = self.draw(rng)
        return Sampled(self.apply(x, record), record)


def apply_record(x: np.ndarray, record: TransformRecord) -> np.ndarray:
    """Replays a recorded transformation on *x*."""
    p = record.parameters
    if record.family is Family.ROTATION:
        return rotate(x, p["theta"])
    if record.family is Family.BACKGROUND:
        return replace_background(x, p["b"])
    if record.family is Family.DILATION_EROSION:
        op = {"dilate": dilate, "erode": erode}[p["op"]]
        return op(x, p["size"])
    if record.family is Family.MIITN:
        raise TransformError("learned transformations are replayed with a MIITN model")
    return np.array(x, copy=True)


def compose_identity() -> TransformDistribution:
    """The distribution whose every sample is its input."""
    return TransformDistribution(Family.IDENTITY)
