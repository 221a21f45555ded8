"""
:mod:`invlab.backbones` -- Classifier architectures
===================================================

- ``simple_cnn``: four blocks of 3×3 convolution, batch normalization, ReLU
  and stride-2 max pooling, then a linear layer;
- ``resnet20`` / ``resnet32``: the small-image residual networks (three
  stacks of 16, 32 and 64 channels, ``n = 3`` or ``5`` blocks per stack).

Every backbone maps ``(N, C, H, W)`` float tensors to ``(N, num_classes)``
logits.
"""
from dataclasses import dataclass
from typing import Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

ARCHITECTURES = ("simple_cnn", "resnet20", "resnet32")
SIMPLE_CNN_CHANNELS = (32, 64, 128, 256)


class BackboneError(ValueError):
    """Raised for unknown architectures or unsupported input shapes."""


class ResidualBlock(nn.Module):
    """Two 3×3 convolutions with a skip connection (projected when shapes change)."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1) -> None:
        super().__init__()
        self.first_conv = nn.Conv2d(
            in_channels,
            out_channels,
            kernel_size=3,
            stride=stride,
            padding=1,
            bias=False,
        )
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.second_conv = nn.Conv2d(
            out_channels, out_channels, kernel_size=3, stride=1, padding=1, bias=False
        )
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(
                    in_channels, out_channels, kernel_size=1, stride=stride, bias=False
                ),
                nn.BatchNorm2d(out_channels),
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.first_conv(x)))
        out = self.bn2(self.second_conv(out))
        return F.relu(out + self.shortcut(x))


class SmallImageResNet(nn.Module):
    def __init__(
        self, blocks_per_stack: int, in_channels: int, num_classes: int
    ) -> None:
        super().__init__()
        self.in_channels = 16
        self.conv1 = nn.Conv2d(
            in_channels, 16, kernel_size=3, stride=1, padding=1, bias=False
        )
        self.bn1 = nn.BatchNorm2d(16)
        self.stack1 = self._make_stack(16, blocks_per_stack, first_block_stride=1)
        self.stack2 = self._make_stack(32, blocks_per_stack, first_block_stride=2)
        self.stack3 = self._make_stack(64, blocks_per_stack, first_block_stride=2)
        self.avg_pool = nn.AdaptiveAvgPool2d((1, 1))
        self.fc = nn.Linear(64, num_classes)
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.kaiming_normal_(m.weight)

    def _make_stack(
        self, out_channels: int, num_blocks: int, first_block_stride: int
    ) -> nn.Sequential:
        strides = [first_block_stride] + [1] * (num_blocks - 1)
        layers = []
        for stride in strides:
            layers.append(ResidualBlock(self.in_channels, out_channels, stride))
            self.in_channels = out_channels
        return nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.stack3(self.stack2(self.stack1(out)))
        return self.fc(torch.flatten(self.avg_pool(out), 1))


class SimpleCNN(nn.Module):
    def __init__(
        self, in_channels: int, num_classes: int, input_size: Tuple[int, int]
    ) -> None:
        super().__init__()
        blocks = []
        channels = in_channels
        for out_channels in SIMPLE_CNN_CHANNELS:
            blocks += [
                nn.Conv2d(channels, out_channels, kernel_size=3, padding=1),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(kernel_size=2, stride=2),
            ]
            channels = out_channels
        self.features = nn.Sequential(*blocks)
        h, w = input_size
        for _ in SIMPLE_CNN_CHANNELS:
            h, w = h // 2, w // 2
        if h < 1 or w < 1:
            raise BackboneError(
                f"simple_cnn needs inputs of at least 16×16, got {input_size}"
            )
        self.fc = nn.Linear(channels * h * w, num_classes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(torch.flatten(self.features(x), 1))


@dataclass(frozen=True)
class BackboneSpec:
    """
    .. attribute:: input_shape

        ``(H, W, C)`` of the images the backbone accepts.
    """

    architecture: str
    num_classes: int
    input_shape: Tuple[int, int, int]


def build_backbone(
    architecture: str, num_classes: int, input_shape: Tuple[int, int, int]
) -> nn.Module:
    """
    :param input_shape: ``(H, W, C)``.
    :raise BackboneError: for an unknown *architecture*.
    """
    h, w, c = input_shape
    if architecture == "simple_cnn":
        model = SimpleCNN(c, num_classes, (h, w))
    elif architecture in ("resnet20", "resnet32"):
        depth = int(architecture[len("resnet"):])
        model = SmallImageResNet((depth - 2) // 6, c, num_classes)
    else:
        raise BackboneError(
            f"unknown architecture {architecture!r}, expected one of {ARCHITECTURES}"
        )
    model.spec = BackboneSpec(architecture, num_classes, tuple(input_shape))
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
