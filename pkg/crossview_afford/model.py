"""The two-branch affordance model: shared encoder, AIM, CFT and head."""

from __future__ import annotations

import logging
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aim import AimParams, DictionaryState, aim_forward
from .cft import CftParams, cft_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .encoder import EncoderConfig, EncoderParams, encode
from .errors import FormatError, LabelError
from .head import HeadParams, LossBreakdown, classify, head_forward, total_loss
from .layers import Layer, iter_parameters
from .tensor import Tensor

log = logging.getLogger(__name__)

W0_NAME = "aim/W0"
_CONFIG_PREFIX = "config."


@dataclass(frozen=True)
class ForwardResult:
    losses: LossBreakdown
    W_batch: np.ndarray


@dataclass
class AffordanceModel:
    config: TrainConfig
    classes: tuple[str, ...]
    encoder: EncoderParams
    aim: AimParams
    cft: CftParams
    head: HeadParams
    dictionary: DictionaryState
    epoch: int = 0

    # --- parameters ---

    def named_layers(self) -> Iterator[tuple[str, Layer]]:
        yield from self.encoder.named_layers("encoder")
        yield from self.aim.named_layers("aim")
        yield from self.cft.named_layers("cft")
        yield from self.head.named_layers("head")

    def parameters(self) -> dict[str, Tensor]:
        return dict(iter_parameters(self.named_layers()))

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        prefix, _, attr = name.rpartition("/")
        for layer_name, layer in self.named_layers():
            if layer_name == prefix and attr in layer.PARAMS:
                current = getattr(layer, attr)
                if current.shape != np.shape(value):
                    raise FormatError(f"{name}: expected shape {current.shape}, got {np.shape(value)}")
                setattr(layer, attr, Tensor(value, requires_grad=True))
                return
        raise FormatError(f"unknown parameter '{name}'")

    def class_index(self, affordance: str) -> int:
        try:
            return self.classes.index(affordance)
        except ValueError:
            raise LabelError(f"unknown affordance '{affordance}' (known: {', '.join(self.classes)})") from None

    # --- forward passes ---

    def forward_instance(
        self,
        ego_image: Tensor,
        exo_images: Sequence[Tensor],
        label: int,
        rng: np.random.Generator,
    ) -> ForwardResult:
        """Training forward pass for one egocentric image and its N exocentric partners."""
        cfg = self.config
        Z_exo = [encode(img, self.encoder) for img in exo_images]
        Z_ego = encode(ego_image, self.encoder)

        if cfg.use_aim:
            aim_out = aim_forward(Z_exo, self.dictionary, self.aim, cfg.nmf_iters, rng)
            F_exo, W_batch = aim_out.features, aim_out.W
        else:
            F_exo, W_batch = Z_exo, np.array(self.dictionary.W0)

        if cfg.use_cft:
            cft_out = cft_forward(Z_ego, W_batch, self.cft, cfg.refine_iters)
            F_ego, l_kt = cft_out.features, cft_out.l_kt
        else:
            F_ego, l_kt = Z_ego, Tensor(0.0)

        out = head_forward(F_exo, F_ego, self.head)
        losses = total_loss(
            out.exo_logits, out.scores.g, label, l_kt,
            lambda1=cfg.lambda1, lambda2=cfg.lambda2, lambda3=cfg.lambda3,
            temperature=cfg.temperature,
        )
        return ForwardResult(losses=losses, W_batch=W_batch)

    def ego_features(self, image: Tensor) -> Tensor:
        """Egocentric-only pass to the head's convolutional features D_ego."""
        Z_ego = encode(image, self.encoder)
        F_ego = Z_ego
        if self.config.use_cft:
            iters = self.config.refine_iters if self.config.refine_at_test else 0
            F_ego = cft_forward(Z_ego, self.dictionary.W0, self.cft, iters).features
        D_ego, _ = classify(F_ego, self.head)
        return D_ego

    # --- persistence ---

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: t.data for name, t in self.parameters().items()}
        arrays[W0_NAME] = self.dictionary.W0
        return arrays

    def meta(self) -> dict[str, str]:
        meta = {f"{_CONFIG_PREFIX}{k}": v for k, v in self.config.to_mapping().items()}
        meta["classes"] = ",".join(self.classes)
        meta["epoch"] = str(self.epoch)
        return meta

    def save(self, directory: Path | str, extra_arrays: Mapping[str, np.ndarray] | None = None) -> Path:
        arrays = self.to_arrays()
        arrays.update(extra_arrays or {})
        return save_checkpoint(directory, arrays, self.meta())


def init_model(config: TrainConfig, classes: Sequence[str]) -> AffordanceModel:
    if not classes:
        raise LabelError("a model needs at least one affordance class")
    rng = np.random.default_rng(config.seed)
    enc_cfg = EncoderConfig(config.input_size, config.stem_width, tuple(config.stage_widths))
    return AffordanceModel(
        config=config,
        classes=tuple(classes),
        encoder=EncoderParams.init(rng, enc_cfg),
        aim=AimParams.init(rng, config.feat_channels, config.channels),
        cft=CftParams.init(rng, config.feat_channels, config.channels),
        head=HeadParams.init(rng, config.feat_channels, config.head_channels, len(classes)),
        dictionary=DictionaryState.init(rng, config.channels, config.rank, config.alpha),
    )


def load_model(directory: Path | str) -> tuple[AffordanceModel, dict[str, np.ndarray]]:
    """Load a checkpoint. Returns the model and any extra (non-model) arrays, e.g. optimizer state."""
    arrays, meta = load_checkpoint(directory)
    config_values = {k[len(_CONFIG_PREFIX):]: v for k, v in meta.items() if k.startswith(_CONFIG_PREFIX)}
    if "classes" not in meta:
        raise FormatError(f"{directory}: model.txt has no class list")
    config = TrainConfig.from_mapping(config_values)
    model = init_model(config, meta["classes"].split(","))
    model.epoch = int(meta.get("epoch", "0"))

    expected = model.parameters()
    missing = [name for name in [*expected, W0_NAME] if name not in arrays]
    if missing:
        raise FormatError(f"{directory}: checkpoint is missing {', '.join(missing)}")
    for name in expected:
        model.set_parameter(name, arrays.pop(name))
    model.dictionary = DictionaryState(W0=arrays.pop(W0_NAME), alpha=config.alpha)
    log.info("Loaded %s (epoch %d, %d classes)", directory, model.epoch, len(model.classes))
    return model, arrays
