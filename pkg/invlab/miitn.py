"""
:mod:`invlab.miitn` -- Multimodal image-to-image translation on one dataset
===========================================================================

A MIITN factors an image into a spatial *content* code and a low-dimensional
*style* code, and decodes any (content, style) pair back into an image with
adaptive instance normalization.
Trained with both translation domains set to the same long-tailed dataset, it
learns the dataset's class-agnostic nuisance variations: decoding the content
of ``x`` with a fresh style ``z ~ N(0, I)`` samples ``x̃ ~ T̃(·|x)``.

Two generators (``gen_a``, ``gen_b``) and two single-scale least-squares
discriminators are trained with the usual four losses (image
reconstruction, adversarial, style and content reconstruction).
Only the ``a → b`` direction is used for sampling.
"""
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from invlab.checkpoint import MIITN_FORMAT, load_checkpoint, save_checkpoint
from invlab.dataset import LabeledImageDataset
from invlab.nuisance import Family, Sampled, TransformRecord
from invlab.seeding import Stream, derive_seed, generator, torch_generator
from invlab.strategies import check_finite

LOSS_COLUMNS = (
    "image_recon",
    "adversarial",
    "style_recon",
    "content_recon",
    "discriminator",
)


class ResolutionMismatchError(ValueError):  # noqa: B903
    """Raised when an image does not match the resolution a model was built for."""

    def __init__(self, expected: Tuple[int, ...], actual: Tuple[int, ...]) -> None:
        super().__init__(f"expected images of shape {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class MiitnLossWeights:
    """
    Weights of the generator objective.
    The domain-invariant perceptual loss is not implemented: its weight must
    stay 0.
    """

    image_recon: float = 10.0
    adversarial: float = 1.0
    style_recon: float = 1.0
    content_recon: float = 1.0
    perceptual: float = 0.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be ≥ 0, got {value}")
        if self.perceptual != 0:
            raise ValueError("the perceptual loss is disabled; its weight must be 0")


@dataclass(frozen=True)
class MiitnPreset:
    """
    Architecture and optimizer settings.

    .. attribute:: dim

        Channels after the first convolution; doubled by each downsampling.

    .. attribute:: mlp_dim

        Width of the MLP mapping styles to AdaIN parameters.
    """

    dim: int = 16
    mlp_dim: int = 64
    style_dim: int = 8
    n_downsample: int = 2
    n_res: int = 4
    style_downsample: int = 4
    dis_dim: int = 16
    dis_layers: int = 4
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 1e-4
    lr_step: int = 100_000
    lr_gamma: float = 0.5


PRESETS: Dict[str, MiitnPreset] = {
    "desk": MiitnPreset(),
    "paper": MiitnPreset(dim=64, mlp_dim=256, dis_dim=64),
}


def preset(name: str) -> MiitnPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown MIITN preset {name!r}, expected one of {sorted(PRESETS)}"
        ) from None


def _conv_block(
    in_dim: int,
    out_dim: int,
    kernel: int,
    stride: int,
    padding: int,
    norm: bool = True,
) -> List[nn.Module]:
    layers: List[nn.Module] = [
        nn.ReflectionPad2d(padding),
        nn.Conv2d(in_dim, out_dim, kernel, stride),
    ]
    if norm:
        layers.append(nn.InstanceNorm2d(out_dim))
    layers.append(nn.ReLU(inplace=True))
    return layers


class ResidualBlock(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(dim, dim, 3),
            nn.InstanceNorm2d(dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.block(x)


class ContentEncoder(nn.Module):
    def __init__(self, input_dim: int, dim: int, n_downsample: int, n_res: int) -> None:
        super().__init__()
        layers = _conv_block(input_dim, dim, 7, 1, 3)
        for _ in range(n_downsample):
            layers += _conv_block(dim, dim * 2, 4, 2, 1)
            dim *= 2
        layers += [ResidualBlock(dim) for _ in range(n_res)]
        self.model = nn.Sequential(*layers)
        self.output_dim = dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)


class StyleEncoder(nn.Module):
    def __init__(
        self, input_dim: int, dim: int, style_dim: int, n_downsample: int
    ) -> None:
        super().__init__()
        layers = _conv_block(input_dim, dim, 7, 1, 3, norm=False)
        for i in range(n_downsample):
            out_dim = dim * 2 if i < 2 else dim
            layers += _conv_block(dim, out_dim, 4, 2, 1, norm=False)
            dim = out_dim
        layers += [nn.AdaptiveAvgPool2d(1), nn.Conv2d(dim, style_dim, 1)]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.flatten(self.model(x), 1)


def adaptive_instance_norm(x: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
    """Normalizes each channel of *x*, then applies ``(bias, scale)`` from *params*."""
    bias, scale = params.chunk(2, dim=1)
    return F.instance_norm(x) * scale[:, :, None, None] + bias[:, :, None, None]


class AdaINResBlock(nn.Module):
    def __init__(self, dim: int) -> None:
        super().__init__()
        self.pad = nn.ReflectionPad2d(1)
        self.conv1 = nn.Conv2d(dim, dim, 3)
        self.conv2 = nn.Conv2d(dim, dim, 3)
        self.num_params = 4 * dim

    def forward(self, x: torch.Tensor, params: torch.Tensor) -> torch.Tensor:
        p1, p2 = params.chunk(2, dim=1)
        out = F.relu(adaptive_instance_norm(self.conv1(self.pad(x)), p1))
        out = adaptive_instance_norm(self.conv2(self.pad(out)), p2)
        return x + out


class Decoder(nn.Module):
    """(content, style) → image in ``[−1, 1]``."""

    def __init__(
        self,
        dim: int,
        output_dim: int,
        style_dim: int,
        mlp_dim: int,
        n_upsample: int,
        n_res: int,
    ) -> None:
        super().__init__()
        self.res_blocks = nn.ModuleList([AdaINResBlock(dim) for _ in range(n_res)])
        layers: List[nn.Module] = []
        for _ in range(n_upsample):
            layers += [
                nn.Upsample(scale_factor=2),
                nn.Conv2d(dim, dim // 2, 5, 1, 2),
                nn.GroupNorm(1, dim // 2),
                nn.ReLU(inplace=True),
            ]
            dim //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(dim, output_dim, 7), nn.Tanh()]
        self.upsample = nn.Sequential(*layers)
        num_params = sum(b.num_params for b in self.res_blocks)
        self.mlp = nn.Sequential(
            nn.Linear(style_dim, mlp_dim),
            nn.ReLU(inplace=True),
            nn.Linear(mlp_dim, mlp_dim),
            nn.ReLU(inplace=True),
            nn.Linear(mlp_dim, num_params),
        )

    def forward(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        params = self.mlp(style)
        out = content
        sizes = [b.num_params for b in self.res_blocks]
        for block, p in zip(self.res_blocks, params.split(sizes, dim=1)):
            out = block(out, p)
        return self.upsample(out)


class Generator(nn.Module):
    def __init__(self, input_dim: int, cfg: MiitnPreset) -> None:
        super().__init__()
        self.content = ContentEncoder(input_dim, cfg.dim, cfg.n_downsample, cfg.n_res)
        self.style = StyleEncoder(
            input_dim, cfg.dim, cfg.style_dim, cfg.style_downsample
        )
        self.decoder = Decoder(
            self.content.output_dim,
            input_dim,
            cfg.style_dim,
            cfg.mlp_dim,
            cfg.n_downsample,
            cfg.n_res,
        )

    def encode(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        return self.content(x), self.style(x)

    def decode(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        return self.decoder(content, style)


class Discriminator(nn.Module):
    """Single-scale least-squares patch discriminator."""

    def __init__(self, input_dim: int, dim: int, n_layers: int) -> None:
        super().__init__()
        layers: List[nn.Module] = [
            nn.Conv2d(input_dim, dim, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for _ in range(n_layers - 1):
            layers += [
                nn.Conv2d(dim, dim * 2, 4, 2, 1),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            dim *= 2
        layers.append(nn.Conv2d(dim, 1, 1))
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.model(x)

    def loss(self, fake: torch.Tensor, real: torch.Tensor) -> torch.Tensor:
        return (self(fake) ** 2).mean() + ((self(real) - 1) ** 2).mean()

    def generator_loss(self, fake: torch.Tensor) -> torch.Tensor:
        return ((self(fake) - 1) ** 2).mean()


def _init_weights(module: nn.Module, gaussian: bool) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            if gaussian:
                nn.init.normal_(m.weight, 0.0, 0.02)
            else:
                nn.init.kaiming_normal_(m.weight, a=0, mode="fan_in")
            if m.bias is not None:
                nn.init.zeros_(m.bias)


class MiitnModel(nn.Module):
    """
    Both generators and discriminators of a MIITN, plus the resolution it
    was built for.

    .. attribute:: image_shape

        ``(H, W, C)`` of accepted images; ``H`` and ``W`` are multiples of
        ``2 ** n_downsample``.
    """

    def __init__(
        self,
        image_shape: Tuple[int, int, int],
        cfg: MiitnPreset = PRESETS["desk"],
        seed: int = 0,
    ) -> None:
        super().__init__()
        h, w, c = image_shape
        factor = 2 ** cfg.n_downsample
        if h % factor or w % factor:
            raise ValueError(
                f"image height and width must be multiples of {factor}, got {h}×{w}"
            )
        self.image_shape = (h, w, c)
        self.cfg = cfg
        self.steps_trained = 0
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(derive_seed(seed, Stream.MIITN, 0))
            self.gen_a = Generator(c, cfg)
            self.gen_b = Generator(c, cfg)
            self.dis_a = Discriminator(c, cfg.dis_dim, cfg.dis_layers)
            self.dis_b = Discriminator(c, cfg.dis_dim, cfg.dis_layers)
            _init_weights(self.gen_a, gaussian=False)
            _init_weights(self.gen_b, gaussian=False)
            _init_weights(self.dis_a, gaussian=True)
            _init_weights(self.dis_b, gaussian=True)

    @property
    def style_dim(self) -> int:
        return self.cfg.style_dim

    def check_shape(self, shape: Sequence[int]) -> None:
        """
        :raise ResolutionMismatchError: unless *shape* is ``(H, W, C)`` (or
            ``(H, W)`` for grayscale) of this model.
        """
        shape = tuple(shape)
        h, w, c = self.image_shape
        if shape != (h, w, c) and not (c == 1 and shape == (h, w)):
            raise ResolutionMismatchError(self.image_shape, shape)


def to_tensor(
    images: np.ndarray, device: Union[str, torch.device] = "cpu"
) -> torch.Tensor:
    """``(N, H, W, C)`` uint8 to ``(N, C, H, W)`` floats in ``[−1, 1]``."""
    x = torch.as_tensor(np.array(images, dtype=np.uint8), device=device)
    x = x.permute(0, 3, 1, 2)
    return x.float() / 127.5 - 1.0


def to_images(x: torch.Tensor) -> np.ndarray:
    """Inverse of :func:`to_tensor`, rounding to the nearest intensity."""
    out = ((x.detach().cpu().clamp(-1, 1) + 1.0) * 127.5).round()
    return out.permute(0, 2, 3, 1).numpy().astype(np.uint8)


def _batched(model: MiitnModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    model.check_shape(x.shape)
    return x.reshape(1, *model.image_shape)


def translate(model: MiitnModel, images: np.ndarray, styles: np.ndarray) -> np.ndarray:
    """Decodes the content of each image with the matching style (rows of *styles*)."""
    device = next(model.parameters()).device
    model.eval()
    with torch.no_grad():
        content = model.gen_a.content(to_tensor(images, device))
        z = torch.as_tensor(styles, dtype=torch.float32, device=device)
        return to_images(model.gen_b.decode(content, z))


def sample_transform(
    model: MiitnModel, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """
    Draws ``x̃ ~ T̃(·|x)``: the content of *x* decoded with a style drawn from
    the unit-normal prior.

    :raise ResolutionMismatchError: if *x* does not match the model.
    """
    z = rng.standard_normal((1, model.style_dim))
    return translate(model, _batched(model, x), z)[0].reshape(np.shape(x))


def reconstruct(model: MiitnModel, x: np.ndarray) -> np.ndarray:
    """Decodes *x* with its own content and style."""
    batch = _batched(model, x)
    device = next(model.parameters()).device
    model.eval()
    with torch.no_grad():
        content, style = model.gen_b.encode(to_tensor(batch, device))
        return to_images(model.gen_b.decode(content, style))[0].reshape(np.shape(x))


class MiitnTransform:
    """A trained MIITN seen as a :class:`~invlab.nuisance.ImageSampler`."""

    family = Family.MIITN

    def __init__(self, model: MiitnModel) -> None:
        self.model = model

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return self.model.image_shape

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> Sampled:
        z = rng.standard_normal((1, self.model.style_dim))
        image = translate(self.model, _batched(self.model, x), z)[0]
        image = image.reshape(np.shape(x))
        return Sampled(image, TransformRecord(Family.MIITN, {"style": z[0].tolist()}))

    def sample_batch(self, images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One fresh style per image, decoded in a single forward pass."""
        if len(images) == 0:
            return images.copy()
        self.model.check_shape(images.shape[1:])
        z = rng.standard_normal((len(images), self.model.style_dim))
        return translate(self.model, images, z)


@dataclass
class _Optimizers:
    gen: torch.optim.Optimizer
    dis: torch.optim.Optimizer
    gen_schedule: Any
    dis_schedule: Any

    def state_dict(self) -> Dict[str, Any]:
        return {
            "gen": self.gen.state_dict(),
            "dis": self.dis.state_dict(),
            "gen_schedule": self.gen_schedule.state_dict(),
            "dis_schedule": self.dis_schedule.state_dict(),
        }

    def load_state_dict(self, state: Dict[str, Any]) -> None:
        self.gen.load_state_dict(state["gen"])
        self.dis.load_state_dict(state["dis"])
        self.gen_schedule.load_state_dict(state["gen_schedule"])
        self.dis_schedule.load_state_dict(state["dis_schedule"])


def _optimizers(model: MiitnModel) -> _Optimizers:
    cfg = model.cfg
    adam = dict(lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    gen = torch.optim.Adam(
        [*model.gen_a.parameters(), *model.gen_b.parameters()], **adam
    )
    dis = torch.optim.Adam(
        [*model.dis_a.parameters(), *model.dis_b.parameters()], **adam
    )
    return _Optimizers(
        gen,
        dis,
        torch.optim.lr_scheduler.StepLR(gen, cfg.lr_step, cfg.lr_gamma),
        torch.optim.lr_scheduler.StepLR(dis, cfg.lr_step, cfg.lr_gamma),
    )


def save_miitn(
    path: Union[str, Path],
    model: MiitnModel,
    optimizers: Optional[_Optimizers] = None,
    **extra: Any,
) -> Path:
    payload = {
        "preset": asdict(model.cfg),
        "image_shape": list(model.image_shape),
        "steps_trained": model.steps_trained,
        "state_dict": model.state_dict(),
        **extra,
    }
    if optimizers is not None:
        payload["optimizers"] = optimizers.state_dict()
    return save_checkpoint(path, MIITN_FORMAT, payload)


def _restore(path: Union[str, Path]) -> Tuple[MiitnModel, Dict[str, Any]]:
    payload = load_checkpoint(path, MIITN_FORMAT)
    model = MiitnModel(tuple(payload["image_shape"]), MiitnPreset(**payload["preset"]))
    model.load_state_dict(payload["state_dict"])
    model.steps_trained = int(payload["steps_trained"])
    return model, payload


def load_miitn(
    path: Union[str, Path], device: Union[str, torch.device] = "cpu"
) -> MiitnModel:
    """
    :raise CheckpointFormatError: if *path* is not a MIITN checkpoint.
    """
    model, _ = _restore(path)
    return model.to(device).eval()


class BalancedImageStream:
    """
    Class-balanced draws of single training images, rescaled to ``[−1, 1]``
    and randomly flipped horizontally. Step ``t`` draws from its own stream.
    """

    def __init__(
        self, dataset: LabeledImageDataset, seed: int, flip: bool = True
    ) -> None:
        self.dataset = dataset
        self.seed = seed
        self.flip = flip
        self.classes = np.flatnonzero(dataset.class_sizes > 0)
        if len(self.classes) == 0:
            raise ValueError(
                f"{dataset.name}: cannot train a MIITN on an empty dataset"
            )
        self.members = {int(j): dataset.class_indices(j) for j in self.classes}

    def draw(self, step: int, slot: int) -> Tuple[int, np.ndarray]:
        rng = generator(self.seed, Stream.MIITN, 1, step, slot)
        j = int(rng.choice(self.classes))
        i = int(rng.choice(self.members[j]))
        image = self.dataset.images[i]
        if self.flip and rng.random() < 0.5:
            image = image[:, ::-1]
        return i, image


@dataclass
class TrainingCurve:
    """Loss components averaged over each logging window."""

    rows: List[Dict[str, float]] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["step", *LOSS_COLUMNS])

    def to_csv(self, path: Union[str, Path]) -> None:
        self.to_frame().to_csv(path, index=False)


def _generator_losses(
    model: MiitnModel, x_a: torch.Tensor, x_b: torch.Tensor, noise: torch.Generator
) -> Dict[str, torch.Tensor]:
    n = x_a.shape[0]
    s_a = torch.randn(n, model.style_dim, generator=noise).to(x_a)
    s_b = torch.randn(n, model.style_dim, generator=noise).to(x_a)
    c_a, s_a_prime = model.gen_a.encode(x_a)
    c_b, s_b_prime = model.gen_b.encode(x_b)
    x_a_recon = model.gen_a.decode(c_a, s_a_prime)
    x_b_recon = model.gen_b.decode(c_b, s_b_prime)
    x_ba = model.gen_a.decode(c_b, s_a)
    x_ab = model.gen_b.decode(c_a, s_b)
    c_b_recon, s_a_recon = model.gen_a.encode(x_ba)
    c_a_recon, s_b_recon = model.gen_b.encode(x_ab)
    return {
        "image_recon": F.l1_loss(x_a_recon, x_a) + F.l1_loss(x_b_recon, x_b),
        "adversarial": (
            model.dis_a.generator_loss(x_ba) + model.dis_b.generator_loss(x_ab)
        ),
        "style_recon": F.l1_loss(s_a_recon, s_a) + F.l1_loss(s_b_recon, s_b),
        "content_recon": F.l1_loss(c_a_recon, c_a) + F.l1_loss(c_b_recon, c_b),
    }


def _discriminator_loss(
    model: MiitnModel, x_a: torch.Tensor, x_b: torch.Tensor, noise: torch.Generator
) -> torch.Tensor:
    n = x_a.shape[0]
    s_a = torch.randn(n, model.style_dim, generator=noise).to(x_a)
    s_b = torch.randn(n, model.style_dim, generator=noise).to(x_a)
    with torch.no_grad():
        x_ba = model.gen_a.decode(model.gen_b.content(x_b), s_a)
        x_ab = model.gen_b.decode(model.gen_a.content(x_a), s_b)
    return model.dis_a.loss(x_ba, x_a) + model.dis_b.loss(x_ab, x_b)


def image_recon_loss(model: MiitnModel, images: np.ndarray) -> float:
    """Mean absolute within-domain reconstruction error, in ``[−1, 1]`` units."""
    device = next(model.parameters()).device
    model.eval()
    with torch.no_grad():
        x = to_tensor(images, device)
        content, style = model.gen_b.encode(x)
        return float(F.l1_loss(model.gen_b.decode(content, style), x))


def train_miitn(
    dataset: LabeledImageDataset,
    steps: int,
    weights: MiitnLossWeights = MiitnLossWeights(),
    seed: int = 0,
    cfg: MiitnPreset = PRESETS["desk"],
    device: Union[str, torch.device] = "cpu",
    checkpoint_path: Optional[Union[str, Path]] = None,
    checkpoint_every: int = 1000,
    log_every: int = 100,
    resume: bool = False,
) -> Tuple[MiitnModel, TrainingCurve]:
    """
    Trains a MIITN on *dataset* for *steps* alternating discriminator and
    generator updates, with batches of one image per domain.

    With *checkpoint_path*, the model and optimizer states are saved every
    *checkpoint_every* steps and at the end; with *resume*, training resumes
    from that checkpoint if it exists.

    :raise NonFiniteLossError: if a loss becomes NaN or infinite.
    """
    model = MiitnModel(dataset.image_shape, cfg, seed).to(device)
    optimizers = _optimizers(model)
    if resume and checkpoint_path is not None and Path(checkpoint_path).exists():
        restored, payload = _restore(checkpoint_path)
        model.load_state_dict(restored.state_dict())
        model.steps_trained = restored.steps_trained
        if "optimizers" in payload:
            optimizers.load_state_dict(payload["optimizers"])
        logging.info("resuming MIITN training from step %d", model.steps_trained)

    stream = BalancedImageStream(dataset, seed)
    curve = TrainingCurve()
    window: Dict[str, List[float]] = {k: [] for k in LOSS_COLUMNS}

    for step in range(model.steps_trained, steps):
        model.train()
        (i_a, image_a), (i_b, image_b) = stream.draw(step, 0), stream.draw(step, 1)
        x_a = to_tensor(image_a[np.newaxis], device)
        x_b = to_tensor(image_b[np.newaxis], device)
        provenance = {"indices": [i_a, i_b]}
        noise = torch_generator(seed, Stream.MIITN, 2, step)

        optimizers.dis.zero_grad()
        dis_loss = _discriminator_loss(model, x_a, x_b, noise)
        window["discriminator"].append(check_finite(dis_loss, step, **provenance))
        dis_loss.backward()
        optimizers.dis.step()

        optimizers.gen.zero_grad()
        losses = _generator_losses(model, x_a, x_b, noise)
        total = sum(getattr(weights, k) * v for k, v in losses.items())
        check_finite(total, step, **provenance)
        total.backward()
        optimizers.gen.step()
        optimizers.gen_schedule.step()
        optimizers.dis_schedule.step()
        for k, v in losses.items():
            window[k].append(float(v.detach()))
        model.steps_trained = step + 1

        if model.steps_trained % log_every == 0 or model.steps_trained == steps:
            means = {k: float(np.mean(v)) for k, v in window.items()}
            row = {"step": model.steps_trained, **means}
            curve.rows.append(row)
            window = {k: [] for k in LOSS_COLUMNS}
            logging.info(
                "miitn step %d: recon %.4f adv %.4f style %.4f content %.4f dis %.4f",
                *(row[k] for k in ("step", *LOSS_COLUMNS)),
            )
        if checkpoint_path is not None and model.steps_trained % checkpoint_every == 0:
            save_miitn(checkpoint_path, model, optimizers, seed=seed)

    if checkpoint_path is not None:
        save_miitn(checkpoint_path, model, optimizers, seed=seed)
    return model.eval(), curve
