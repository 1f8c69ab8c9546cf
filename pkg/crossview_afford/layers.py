"""Trainable convolution and fully connected layers over :class:`Tensor`."""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from typing import ClassVar, Union

import numpy as np

from .tensor import Tensor, conv2d, matmul


def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class Conv2d:
    PARAMS: ClassVar[tuple[str, ...]] = ("kernel", "bias")

    kernel: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        in_channels: int,
        out_channels: int,
        kernel_size: int = 3,
        stride: int = 1,
    ) -> Conv2d:
        area = kernel_size * kernel_size
        kernel = glorot_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size),
            fan_in=in_channels * area, fan_out=out_channels * area,
        )
        return cls(
            kernel=Tensor(kernel, requires_grad=True),
            bias=Tensor(np.zeros(out_channels), requires_grad=True),
            stride=stride,
            padding=kernel_size // 2,
        )

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.kernel, self.bias, stride=self.stride, padding=self.padding)


@dataclass
class Linear:
    PARAMS: ClassVar[tuple[str, ...]] = ("weight", "bias")

    weight: Tensor  # out × in
    bias: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, in_features: int, out_features: int) -> Linear:
        weight = glorot_uniform(rng, (out_features, in_features), fan_in=in_features, fan_out=out_features)
        return cls(
            weight=Tensor(weight, requires_grad=True),
            bias=Tensor(np.zeros(out_features), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        n_in = self.weight.shape[1]
        return matmul(self.weight, x.reshape(n_in, 1)).reshape(self.weight.shape[0]) + self.bias


Layer = Union[Conv2d, Linear]


def iter_parameters(named_layers: Iterable[tuple[str, Layer]]) -> Iterator[tuple[str, Tensor]]:
    for prefix, layer in named_layers:
        for attr in layer.PARAMS:
            yield f"{prefix}/{attr}", getattr(layer, attr)
