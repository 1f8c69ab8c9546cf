"""Egocentric-only grounding: class activation maps turned into normalised heatmaps."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .dataset import SampleRecord, load_image, resize_image
from .errors import LabelError, ShapeError
from .heatmap import GroundingHeatmap, normalize_heatmap, upsample_bilinear, write_heatmap
from .model import AffordanceModel
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)


def compute_cam(D_ego: np.ndarray, fc_weights: np.ndarray, class_index: int) -> np.ndarray:
    """Channel sum of ``D_ego`` weighted by the class's FC row; no normalisation."""
    D_ego = np.asarray(D_ego, dtype=np.float64)
    fc_weights = np.asarray(fc_weights, dtype=np.float64)
    if D_ego.ndim != 3 or fc_weights.ndim != 2 or fc_weights.shape[1] != D_ego.shape[0]:
        raise ShapeError(f"compute_cam: D {D_ego.shape} and fc weights {fc_weights.shape} do not agree")
    if not 0 <= class_index < fc_weights.shape[0]:
        raise LabelError(f"class index {class_index} outside [0, {fc_weights.shape[0]})")
    return np.tensordot(fc_weights[class_index], D_ego, axes=1)


def cam_to_heatmap(cam: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    return normalize_heatmap(upsample_bilinear(np.maximum(cam, 0.0), size))


def ground(image: np.ndarray, affordance: str, model: AffordanceModel, image_id: str = "") -> GroundingHeatmap:
    """Heatmap for ``affordance`` over a 3×H×W image in [-1, 1], at the image's own size."""
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"ground expects a 3×H×W image, got {image.shape}")
    class_index = model.class_index(affordance)
    with no_grad():
        D_ego = model.ego_features(Tensor(resize_image(image, model.config.input_size)))
    cam = compute_cam(D_ego.data, model.head.fc.weight.data, class_index)
    return GroundingHeatmap(
        map=cam_to_heatmap(cam, image.shape[1:]),
        affordance=affordance,
        image_id=image_id,
        affordance_class=class_index,
    )


def ground_records(
    model: AffordanceModel,
    records: Sequence[SampleRecord],
    out_dir: Path | str,
    workers: int = 1,
) -> list[Path]:
    """Ground each record for its own affordance and write the heatmaps, in record order."""
    out_dir = Path(out_dir)

    def run(record: SampleRecord) -> Path:
        heatmap = ground(load_image(record.image_path), record.affordance, model, record.id)
        return write_heatmap(out_dir, heatmap)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        paths = list(pool.map(run, records))
    log.info("Wrote %d heatmaps to %s", len(paths), out_dir)
    return paths
