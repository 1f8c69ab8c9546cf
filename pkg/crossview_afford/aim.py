"""Affordance invariance mining over a group of exocentric feature maps."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError, InputError, ShapeError
from .layers import Conv2d, Layer
from .tensor import Tensor, concat, no_grad, relu, stop_gradient

log = logging.getLogger(__name__)

NMF_DELTA = 1e-12


@dataclass(frozen=True)
class DictionaryState:
    """Momentum accumulator ``W0`` (c×r) shared across batches."""

    W0: np.ndarray
    alpha: float = 0.9

    def __post_init__(self) -> None:
        w0 = np.array(self.W0, dtype=np.float64)
        if w0.ndim != 2:
            raise ShapeError(f"W0 must be c×r, got shape {w0.shape}")
        if np.any(w0 < 0):
            raise DomainError("W0 must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        w0.flags.writeable = False
        object.__setattr__(self, "W0", w0)

    @property
    def channels(self) -> int:
        return self.W0.shape[0]

    @property
    def rank(self) -> int:
        return self.W0.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, channels: int, rank: int, alpha: float = 0.9) -> DictionaryState:
        return cls(W0=1.0 - rng.random((channels, rank)), alpha=alpha)


@dataclass(frozen=True)
class NmfResult:
    W: np.ndarray
    H: np.ndarray
    reconstruction_errors: list[float] = field(default_factory=list)


def _frobenius(X: np.ndarray, W: np.ndarray, H: np.ndarray) -> float:
    return float(np.linalg.norm(X - W @ H))


def nmf_factorize(X: np.ndarray, W_init: np.ndarray, H_init: np.ndarray, iters: int) -> NmfResult:
    """Multiplicative updates for ``min ||X - WH||_F``, H first then W, each iteration.

    ``reconstruction_errors[0]`` is the error at the initial factors, followed by
    one entry per iteration. The inputs are never modified.
    """
    X, W, H = (np.array(a, dtype=np.float64) for a in (X, W_init, H_init))
    if X.ndim != 2 or W.ndim != 2 or H.ndim != 2:
        raise ShapeError("nmf_factorize expects matrices")
    if W.shape[0] != X.shape[0] or H.shape[1] != X.shape[1] or W.shape[1] != H.shape[0]:
        raise ShapeError(f"nmf_factorize: X {X.shape}, W {W.shape}, H {H.shape} do not agree")
    if iters < 0:
        raise ConfigError(f"iters must be >= 0, got {iters}")
    for name, a in (("X", X), ("W", W), ("H", H)):
        if np.any(a < 0):
            raise DomainError(f"nmf_factorize: {name} has negative entries")

    errors = [_frobenius(X, W, H)]
    for _ in range(iters):
        H = H * (W.T @ X) / (W.T @ W @ H + NMF_DELTA)
        W = W * (X @ H.T) / (W @ H @ H.T + NMF_DELTA)
        errors.append(_frobenius(X, W, H))
    return NmfResult(W=W, H=H, reconstruction_errors=errors)


@dataclass
class AimParams:
    f_reduce: Conv2d
    f_residual: Conv2d

    @classmethod
    def init(cls, rng: np.random.Generator, feat_channels: int, channels: int) -> AimParams:
        return cls(
            f_reduce=Conv2d.init(rng, feat_channels, channels, kernel_size=1),
            f_residual=Conv2d.init(rng, channels, feat_channels, kernel_size=1),
        )

    def named_layers(self, prefix: str = "aim") -> Iterator[tuple[str, Layer]]:
        yield f"{prefix}/f_reduce", self.f_reduce
        yield f"{prefix}/f_residual", self.f_residual


def reduce_nonneg(Z: Tensor, f_reduce: Conv2d) -> Tensor:
    """1×1 conv and ReLU, flattened to c×(h·w)."""
    X = relu(f_reduce(Z))
    c, h, w = X.shape
    return X.reshape(c, h * w)


@dataclass(frozen=True)
class AimOutput:
    features: list[Tensor]
    W: np.ndarray
    H: np.ndarray
    reconstruction_errors: list[float]


def aim_forward(
    Z_list: Sequence[Tensor],
    state: DictionaryState,
    params: AimParams,
    iters: int,
    rng: np.random.Generator,
) -> AimOutput:
    """Factor the concatenated exocentric features and fuse the reconstruction back residually."""
    if not Z_list:
        raise InputError("aim_forward needs at least one exocentric feature map")
    shape = Z_list[0].shape
    if any(z.shape != shape for z in Z_list):
        raise ShapeError(f"aim_forward: feature maps differ in shape {[z.shape for z in Z_list]}")
    _, h, w = shape
    hw = h * w

    with no_grad():
        X = concat([reduce_nonneg(stop_gradient(z), params.f_reduce) for z in Z_list], axis=1).data
    H_init = 1.0 - rng.random((state.rank, X.shape[1]))
    result = nmf_factorize(X, state.W0, H_init, iters)
    M = result.W @ result.H
    log.debug("aim nmf errors %s", result.reconstruction_errors)

    features = []
    for i, z in enumerate(Z_list):
        M_i = Tensor(M[:, i * hw:(i + 1) * hw].reshape(-1, h, w))
        features.append(relu(z + params.f_residual(M_i)))
    return AimOutput(features=features, W=result.W, H=result.H, reconstruction_errors=result.reconstruction_errors)


def update_dictionary_momentum(state: DictionaryState, W_mean: np.ndarray) -> DictionaryState:
    """``W0 <- alpha * W0 + (1 - alpha) * W_mean``."""
    W_mean = np.asarray(W_mean, dtype=np.float64)
    if W_mean.shape != state.W0.shape:
        raise ShapeError(f"momentum update: W0 is {state.W0.shape}, batch mean is {W_mean.shape}")
    if np.any(W_mean < 0):
        raise DomainError("momentum update: batch dictionary has negative entries")
    return DictionaryState(W0=state.alpha * state.W0 + (1.0 - state.alpha) * W_mean, alpha=state.alpha)
