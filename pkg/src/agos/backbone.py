"""Small from-scratch CNN producing the feature map fed to multi-grain perception."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ModelParams
from .tensor import Tensor, conv2d, dropout, relu


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 16
    num_blocks: int = 2
    downsample: int = 4
    out_channels: int = 32

    def __post_init__(self):
        if min(self.stem_channels, self.num_blocks, self.out_channels, self.downsample) < 1:
            raise ValueError("backbone sizes must be positive")
        if self.downsample & (self.downsample - 1):
            raise ValueError("downsample factor must be a power of two")

    @property
    def num_stems(self) -> int:
        return int(self.downsample).bit_length() - 1

    @classmethod
    def from_train(cls, config) -> "BackboneConfig":
        return cls(config.stem_channels, config.num_blocks, config.downsample, config.out_channels)

    def output_shape(self, input_shape: tuple[int, int, int, int]) -> tuple[int, int, int, int]:
        n, h, w, _ = input_shape
        if h % self.downsample or w % self.downsample:
            raise ValueError(f"spatial size {h}x{w} not divisible by {self.downsample}")
        return n, h // self.downsample, w // self.downsample, self.out_channels


def init_backbone(params: ModelParams, config: BackboneConfig, in_channels: int,
                  rng: np.random.Generator, dtype) -> None:
    """He-normal weights (std sqrt(2 / fan_in)), zero biases."""
    cin = in_channels
    for i in range(config.num_stems):
        params.add_conv(f"backbone.stem{i}", 3, cin, config.stem_channels, np.sqrt(2.0 / (9 * cin)), rng, dtype)
        cin = config.stem_channels
    for i in range(config.num_blocks):
        params.add_conv(f"backbone.block{i}", 3, cin, config.out_channels, np.sqrt(2.0 / (9 * cin)), rng, dtype)
        cin = config.out_channels


def backbone_forward(image: Tensor, params: ModelParams, config: BackboneConfig, training: bool = False,
                     dropout_rate: float = 0.0, rng: np.random.Generator | None = None) -> Tensor:
    config.output_shape(image.shape)
    x = image
    for i in range(config.num_stems):
        x = relu(conv2d(x, params.kernel(f"backbone.stem{i}"), stride=2))
    for i in range(config.num_blocks):
        x = relu(conv2d(x, params.kernel(f"backbone.block{i}")))
    return dropout(x, dropout_rate, training, rng)
