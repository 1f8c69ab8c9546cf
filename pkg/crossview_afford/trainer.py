"""Mini-batch SGD over (1 egocentric + N exocentric) training instances."""

from __future__ import annotations

import csv
import functools
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aim import update_dictionary_momentum
from .config import RUN_CONFIG_NAME, TrainConfig, write_config
from .dataset import SampleRecord, affordance_classes, load_image, random_crop_flip, select
from .errors import DatasetError, InputError, TrainingError
from .ftm import snap_to_f32
from .model import AffordanceModel, init_model, load_model
from .tensor import ComputationTape, Tensor, stack, tensor_mean

log = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoint"
LOSS_LOG_NAME = "loss_log.csv"
LOSS_LOG_HEADER = ("epoch", "step", "l_cls", "l_acp", "l_kt", "total")
OPTIM_PREFIX = "optim/"


@dataclass(frozen=True)
class TrainingInstance:
    ego: SampleRecord
    exo: tuple[SampleRecord, ...]
    label: int


def build_instances(
    records: Sequence[SampleRecord],
    n_exo: int,
    rng: np.random.Generator,
    classes: Sequence[str] | None = None,
) -> list[TrainingInstance]:
    """Pair every egocentric training record with ``n_exo`` exocentric records of its label."""
    classes = list(classes or affordance_classes(records))
    exo_by_label: dict[str, list[SampleRecord]] = {}
    for r in select(records, role="exocentric", split="train"):
        exo_by_label.setdefault(r.affordance, []).append(r)

    instances = []
    for ego in select(records, role="egocentric", split="train"):
        pool = exo_by_label.get(ego.affordance)
        if not pool:
            raise DatasetError(f"affordance '{ego.affordance}' has no exocentric training images")
        picks = rng.choice(len(pool), size=n_exo, replace=len(pool) < n_exo)
        instances.append(
            TrainingInstance(ego=ego, exo=tuple(pool[i] for i in picks), label=classes.index(ego.affordance))
        )
    return instances


class SGD:
    """``v <- mu * v + g``; ``theta <- theta - lr * (v + wd * theta)``.

    With ``clip > 0`` the gradient is first rescaled so its global L2 norm is at most ``clip``.
    """

    def __init__(self, lr: float, momentum: float, weight_decay: float, clip: float = 0.0) -> None:
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip = clip
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, model: AffordanceModel) -> float:
        """Apply one update and return the pre-clipping gradient norm."""
        params = model.parameters()
        grads = {
            name: param.grad if param.grad is not None else np.zeros(param.shape) for name, param in params.items()
        }
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        scale = self.clip / norm if self.clip > 0 and norm > self.clip else 1.0
        for name, param in params.items():
            grad = grads[name] * scale
            v = self.velocity.get(name)
            v = grad.copy() if v is None else self.momentum * v + grad
            self.velocity[name] = v
            model.set_parameter(name, param.data - self.lr * (v + self.weight_decay * param.data))
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {f"{OPTIM_PREFIX}{name}": v for name, v in self.velocity.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.velocity = {
            name[len(OPTIM_PREFIX):]: np.array(v) for name, v in arrays.items() if name.startswith(OPTIM_PREFIX)
        }


class ImageCache:
    """Decoded training images, keeping the ``maxsize`` most recently used."""

    def __init__(self, maxsize: int = 512) -> None:
        self._load = functools.lru_cache(maxsize=maxsize)(load_image)

    def __call__(self, path: str) -> np.ndarray:
        return self._load(path)

    def __len__(self) -> int:
        return self._load.cache_info().currsize


@dataclass(frozen=True)
class StepResult:
    components: dict[str, float]
    grad_norm: float = 0.0


def train_step(
    batch: Sequence[TrainingInstance],
    model: AffordanceModel,
    optimizer: SGD,
    rng: np.random.Generator,
    images: Callable[[str], np.ndarray],
) -> StepResult:
    """One forward/backward pass over the batch, an SGD update, then the dictionary update."""
    if not batch:
        raise InputError("train_step needs a non-empty batch")
    cfg = model.config

    def prepare(record: SampleRecord) -> Tensor:
        return Tensor(
            random_crop_flip(images(record.image_path), cfg.crop_source, cfg.input_size, rng, cfg.crop, cfg.flip)
        )

    with ComputationTape() as tape:
        results = []
        for instance in batch:
            ego = prepare(instance.ego)
            exo = [prepare(r) for r in instance.exo]
            results.append(model.forward_instance(ego, exo, instance.label, rng))
        batch_loss = tensor_mean(stack([r.losses.total for r in results]))

        components = {
            key: float(np.mean([r.losses.values()[key] for r in results]))
            for key in ("l_cls", "l_acp", "l_kt")
        }
        components["total"] = batch_loss.item()
        if not all(math.isfinite(v) for v in components.values()):
            raise TrainingError("non-finite loss", components)
        tape.backward(batch_loss)

    grad_norm = optimizer.step(model)
    W_mean = np.mean([r.W_batch for r in results], axis=0)
    model.dictionary = update_dictionary_momentum(model.dictionary, W_mean)
    return StepResult(components=components, grad_norm=grad_norm)


def snap_model(model: AffordanceModel, optimizer: SGD) -> None:
    """Round parameters, velocities and W0 to float32 so a checkpoint restores them exactly."""
    for name, param in model.parameters().items():
        model.set_parameter(name, snap_to_f32(param.data))
    optimizer.velocity = {k: snap_to_f32(v) for k, v in optimizer.velocity.items()}
    model.dictionary = type(model.dictionary)(W0=snap_to_f32(model.dictionary.W0), alpha=model.dictionary.alpha)


@dataclass
class TrainResult:
    model: AffordanceModel
    checkpoint: Path
    loss_log: Path
    epoch_losses: list[dict[str, float]] = field(default_factory=list)


def train(
    records: Sequence[SampleRecord],
    config: TrainConfig,
    out_dir: Path | str,
    resume: Path | str | None = None,
    on_epoch: Callable[[int, dict[str, float]], None] | None = None,
) -> TrainResult:
    """Train for ``config.epochs`` epochs, checkpointing to ``<out_dir>/checkpoint`` after each."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    optimizer = SGD(config.lr, config.sgd_momentum, config.weight_decay, config.grad_clip)

    if resume is not None:
        model, extra = load_model(resume)
        model.config = model.config.replace(epochs=config.epochs)
        cfg = model.config
        optimizer = SGD(cfg.lr, cfg.sgd_momentum, cfg.weight_decay, cfg.grad_clip)
        optimizer.load_state(extra)
        log.info("Resuming from epoch %d", model.epoch)
    else:
        classes = affordance_classes(select(records, split="train"))
        if not classes:
            raise DatasetError("manifest has no training records")
        model = init_model(config, classes)
        snap_model(model, optimizer)
    cfg = model.config
    write_config(out_dir / RUN_CONFIG_NAME, cfg.to_mapping())

    loss_log = out_dir / LOSS_LOG_NAME
    step = 0
    if resume is None or not loss_log.exists():
        with loss_log.open("w", newline="", encoding="utf-8") as handle:
            csv.writer(handle).writerow(LOSS_LOG_HEADER)
    else:
        with loss_log.open("r", encoding="utf-8") as handle:
            step = sum(1 for _ in handle) - 1

    checkpoint = out_dir / CHECKPOINT_DIR
    images = ImageCache()
    result = TrainResult(model=model, checkpoint=checkpoint, loss_log=loss_log)
    for epoch in range(model.epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        instances = build_instances(records, cfg.n_exo, rng, model.classes)
        if not instances:
            raise DatasetError("manifest has no egocentric training records")
        order = rng.permutation(len(instances))
        sums = dict.fromkeys(("l_cls", "l_acp", "l_kt", "total"), 0.0)
        n_steps = 0
        with loss_log.open("a", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            for start in range(0, len(order), cfg.batch_size):
                batch = [instances[i] for i in order[start:start + cfg.batch_size]]
                c = train_step(batch, model, optimizer, rng, images).components
                step += 1
                n_steps += 1
                writer.writerow([epoch + 1, step, *(repr(c[k]) for k in LOSS_LOG_HEADER[2:])])
                for key in sums:
                    sums[key] += c[key]

        snap_model(model, optimizer)
        model.epoch = epoch + 1
        model.save(checkpoint, optimizer.state_arrays())
        means = {k: v / n_steps for k, v in sums.items()}
        result.epoch_losses.append(means)
        log.info("epoch %d: %s", epoch + 1, ", ".join(f"{k}={v:.4f}" for k, v in means.items()))
        if on_epoch is not None:
            on_epoch(epoch + 1, means)

    if not result.epoch_losses:
        model.save(checkpoint, optimizer.state_arrays())
    return result
