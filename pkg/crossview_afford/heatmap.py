"""Normalised heatmaps and their on-disk forms (FTM1 plus an 8-bit PGM preview)."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import zoom

from .errors import DomainError, ShapeError
from .ftm import write_tensor


@dataclass(frozen=True)
class GroundingHeatmap:
    map: np.ndarray
    affordance: str
    image_id: str
    affordance_class: int | None = None

    def __post_init__(self) -> None:
        m = np.array(self.map, dtype=np.float64)
        if m.ndim != 2:
            raise ShapeError(f"heatmap must be 2-d, got shape {m.shape}")
        if np.any(m < 0) or not np.isclose(m.sum(), 1.0, atol=1e-8):
            raise DomainError(f"heatmap for {self.image_id} is not a normalised distribution")
        m.flags.writeable = False
        object.__setattr__(self, "map", m)

    @property
    def shape(self) -> tuple[int, int]:
        return self.map.shape

    @property
    def stem(self) -> str:
        return f"{self.image_id}.{self.affordance}"


def normalize_heatmap(raw: np.ndarray) -> np.ndarray:
    """Shift to a zero minimum and scale to sum 1; a constant map becomes uniform."""
    raw = np.asarray(raw, dtype=np.float64)
    if not np.all(np.isfinite(raw)):
        raise DomainError("heatmap has non-finite entries")
    shifted = raw - raw.min()
    total = shifted.sum()
    if total <= 0:
        return np.full(raw.shape, 1.0 / raw.size)
    return shifted / total


def upsample_bilinear(raw: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Corner-aligned bilinear resize of a 2-d map."""
    h, w = np.shape(raw)
    out_h, out_w = size
    if (h, w) == (out_h, out_w):
        return np.array(raw, dtype=np.float64)
    return zoom(np.asarray(raw, dtype=np.float64), (out_h / h, out_w / w), order=1, grid_mode=False)


def write_preview(path: Path | str, heatmap: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    peak = heatmap.max()
    scaled = heatmap / peak if peak > 0 else heatmap
    Image.fromarray(np.round(scaled * 255).astype(np.uint8)).save(path, format="PPM")
    return path


def write_heatmap(directory: Path | str, heatmap: GroundingHeatmap) -> Path:
    """Write ``<image_id>.<affordance>.ftm`` and its ``.pgm`` preview; returns the FTM1 path."""
    directory = Path(directory)
    path = write_tensor(directory / f"{heatmap.stem}.ftm", heatmap.map)
    write_preview(directory / f"{heatmap.stem}.pgm", heatmap.map)
    return path
