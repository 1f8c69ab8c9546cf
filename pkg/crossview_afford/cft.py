"""Cross-view feature transfer from the exocentric dictionary to an egocentric image."""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass

import numpy as np

from .aim import nmf_factorize, reduce_nonneg
from .errors import DomainError, ShapeError
from .layers import Conv2d, Layer
from .tensor import Tensor, channel_max, l2_loss, matmul, relu, softmax_rows, transpose


@dataclass
class CftParams:
    f_reduce: Conv2d
    f_residual: Conv2d
    project: Conv2d

    @classmethod
    def init(cls, rng: np.random.Generator, feat_channels: int, channels: int) -> CftParams:
        return cls(
            f_reduce=Conv2d.init(rng, feat_channels, channels, kernel_size=1),
            f_residual=Conv2d.init(rng, channels, feat_channels, kernel_size=1),
            project=Conv2d.init(rng, feat_channels, channels, kernel_size=1),
        )

    def named_layers(self, prefix: str = "cft") -> Iterator[tuple[str, Layer]]:
        yield f"{prefix}/f_reduce", self.f_reduce
        yield f"{prefix}/f_residual", self.f_residual
        yield f"{prefix}/project", self.project


def dense_match(X_ego: Tensor, W: np.ndarray) -> Tensor:
    """Per-pixel softmax over the r basis scores, returned as r×(h·w)."""
    W = np.asarray(W, dtype=np.float64)
    if X_ego.ndim != 2 or W.ndim != 2 or X_ego.shape[0] != W.shape[0]:
        raise ShapeError(f"dense_match: X_ego {X_ego.shape} and W {W.shape} do not agree")
    if np.any(W < 0):
        raise DomainError("dense_match: W has negative entries")
    return transpose(softmax_rows(matmul(transpose(X_ego), Tensor(W))))


@dataclass(frozen=True)
class CftOutput:
    features: Tensor
    l_kt: Tensor
    H_match: Tensor
    H_ego: Tensor
    W: np.ndarray
    reconstruction_errors: list[float]


def cft_forward(Z_ego: Tensor, W_batch: np.ndarray, params: CftParams, iters: int) -> CftOutput:
    """Fused egocentric features and the channel-max alignment loss.

    The refined coefficients enter as ``H_match + (H_refined - H_match)`` with the
    difference held constant, so the value is the refined matrix while the
    gradient flows into the dense match. ``W_batch`` is never modified.
    """
    c_feat, h, w = Z_ego.shape
    X_ego = reduce_nonneg(Z_ego, params.f_reduce)
    H_match = dense_match(X_ego, W_batch)

    refined = nmf_factorize(X_ego.data, W_batch, H_match.data, iters)
    H_ego = H_match + Tensor(refined.H - H_match.data)
    M_ego = matmul(Tensor(refined.W), H_ego).reshape(-1, h, w)

    fused = relu(params.f_residual(M_ego) + Z_ego)
    projected = relu(params.project(Z_ego))
    l_kt = l2_loss(channel_max(fused), channel_max(projected))
    return CftOutput(
        features=fused,
        l_kt=l_kt,
        H_match=H_match,
        H_ego=H_ego,
        W=refined.W,
        reconstruction_errors=refined.reconstruction_errors,
    )
