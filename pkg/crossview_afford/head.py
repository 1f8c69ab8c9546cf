"""Shared classification head, co-relation preserving loss and the total objective."""

from __future__ import annotations

from collections.abc import Iterator, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InputError
from .layers import Conv2d, Layer, Linear
from .tensor import Tensor, cross_entropy, gap, log_, matmul, softmax_rows, stack, stop_gradient, tensor_mean

LOG_GUARD = 1e-12


@dataclass
class HeadParams:
    conv: Conv2d
    fc: Linear

    @classmethod
    def init(cls, rng: np.random.Generator, feat_channels: int, head_channels: int, n_classes: int) -> HeadParams:
        return cls(
            conv=Conv2d.init(rng, feat_channels, head_channels),
            fc=Linear.init(rng, head_channels, n_classes),
        )

    @property
    def n_classes(self) -> int:
        return self.fc.weight.shape[0]

    def named_layers(self, prefix: str = "head") -> Iterator[tuple[str, Layer]]:
        yield f"{prefix}/conv", self.conv
        yield f"{prefix}/fc", self.fc


@dataclass(frozen=True)
class PredictionScores:
    s: Tensor  # exocentric, mean over the N images
    g: Tensor  # egocentric


@dataclass(frozen=True)
class HeadOutput:
    D_exo: list[Tensor]
    D_ego: Tensor
    exo_logits: list[Tensor]
    scores: PredictionScores


def classify(F: Tensor, params: HeadParams) -> tuple[Tensor, Tensor]:
    D = params.conv(F)
    return D, params.fc(gap(D))


def head_forward(F_exo: Sequence[Tensor], F_ego: Tensor, params: HeadParams) -> HeadOutput:
    if not F_exo:
        raise InputError("head_forward needs at least one exocentric feature map")
    D_exo, exo_logits = zip(*(classify(f, params) for f in F_exo))
    D_ego, g = classify(F_ego, params)
    s = tensor_mean(stack(list(exo_logits)), axis=0)
    return HeadOutput(D_exo=list(D_exo), D_ego=D_ego, exo_logits=list(exo_logits), scores=PredictionScores(s=s, g=g))


def correlation_matrix(logits: Tensor, temperature: float) -> Tensor:
    """Outer product of the tempered class distribution with itself."""
    n = logits.shape[0]
    p = softmax_rows(logits, temperature)
    return matmul(p.reshape(n, 1), p.reshape(1, n))


def acp_loss(s: Tensor, g: Tensor, temperature: float) -> Tensor:
    """Cross-entropy of the egocentric co-relation matrix against the frozen exocentric one."""
    if not temperature > 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    P = correlation_matrix(stop_gradient(s), temperature)
    Q = correlation_matrix(g, temperature)
    return -(P * log_(Q + LOG_GUARD)).sum()


@dataclass(frozen=True)
class LossBreakdown:
    l_cls: Tensor
    l_acp: Tensor
    l_kt: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "l_cls": self.l_cls.item(),
            "l_acp": self.l_acp.item(),
            "l_kt": self.l_kt.item(),
            "total": self.total.item(),
        }


def total_loss(
    exo_logits: Sequence[Tensor],
    ego_logits: Tensor,
    label: int,
    l_kt: Tensor,
    lambda1: float = 1.0,
    lambda2: float = 0.5,
    lambda3: float = 0.5,
    temperature: float = 1.0,
) -> LossBreakdown:
    if not exo_logits:
        raise InputError("total_loss needs at least one exocentric logit vector")
    for name, value in (("lambda1", lambda1), ("lambda2", lambda2), ("lambda3", lambda3)):
        if value < 0:
            raise ConfigError(f"{name} must be >= 0, got {value}")
    exo_ce = tensor_mean(stack([cross_entropy(z, label) for z in exo_logits]))
    l_cls = exo_ce + cross_entropy(ego_logits, label)
    s = tensor_mean(stack(list(exo_logits)), axis=0)
    l_acp = acp_loss(s, ego_logits, temperature)
    total = l_cls * lambda1 + l_acp * lambda2 + l_kt * lambda3
    return LossBreakdown(l_cls=l_cls, l_acp=l_acp, l_kt=l_kt, total=total)
