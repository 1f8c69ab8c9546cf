"""Small convolutional backbone shared by the exocentric and egocentric branches.

stem 3×3 conv, then per stage: 3×3 conv, ReLU, stride-2 3×3 conv, ReLU.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .layers import Conv2d
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    input_size: int
    stem_width: int
    stage_widths: tuple[int, ...]

    @property
    def out_channels(self) -> int:
        return self.stage_widths[-1]

    @property
    def out_size(self) -> int:
        return self.input_size // 2 ** len(self.stage_widths)


@dataclass
class EncoderParams:
    config: EncoderConfig
    stem: Conv2d
    stages: list[tuple[Conv2d, Conv2d]]

    @classmethod
    def init(cls, rng: np.random.Generator, config: EncoderConfig) -> EncoderParams:
        stem = Conv2d.init(rng, 3, config.stem_width)
        stages = []
        width = config.stem_width
        for out in config.stage_widths:
            conv = Conv2d.init(rng, width, out)
            down = Conv2d.init(rng, out, out, stride=2)
            stages.append((conv, down))
            width = out
        return cls(config=config, stem=stem, stages=stages)

    def named_layers(self, prefix: str = "encoder") -> Iterator[tuple[str, Conv2d]]:
        yield f"{prefix}/stem", self.stem
        for i, (conv, down) in enumerate(self.stages, start=1):
            yield f"{prefix}/stage{i}_conv", conv
            yield f"{prefix}/stage{i}_down", down


def encode(image: Tensor, params: EncoderParams) -> Tensor:
    """Map a 3×H×W image in [-1, 1] to a c_feat×h×w feature map."""
    size = params.config.input_size
    if image.shape != (3, size, size):
        raise ShapeError(f"encoder expects a 3×{size}×{size} image, got {image.shape}")
    x = params.stem(image)
    for conv, down in params.stages:
        x = down(conv(x).relu()).relu()
    return x
