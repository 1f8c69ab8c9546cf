"""Manifests, point annotations, dataset splits and image loading."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, get_args

import numpy as np
from PIL import Image
from scipy.ndimage import zoom
from scipy.special import logsumexp

from .errors import AnnotationError, ConfigError, DatasetError, FormatError, ParseError
from .heatmap import GroundingHeatmap

log = logging.getLogger(__name__)

Role = Literal["exocentric", "egocentric"]
Split = Literal["train", "test"]
Partition = Literal["seen", "unseen"]
Scale = Literal["Big", "Middle", "Small"]

SCALES: tuple[str, ...] = get_args(Scale)
TAGS: tuple[str, ...] = ("BC", "NCP", "MO")
ATTRIBUTES: frozenset[str] = frozenset(SCALES + TAGS)
MANIFEST_FIELDS = (
    "id", "role", "affordance", "object", "split", "seen_partition",
    "image_path", "gt_heatmap_path", "attributes",
)

BIG_RATIO = 0.1
MIDDLE_RATIO = 0.03


@dataclass(frozen=True)
class SampleRecord:
    id: str
    role: Role
    affordance: str
    object: str
    split: Split
    seen_partition: Partition
    image_path: str
    gt_heatmap_path: str | None = None
    attributes: tuple[str, ...] = ()

    @property
    def is_test_ego(self) -> bool:
        return self.split == "test" and self.role == "egocentric"

    @property
    def scale(self) -> str | None:
        return next((a for a in self.attributes if a in SCALES), None)

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(a for a in self.attributes if a in TAGS)


@dataclass(frozen=True)
class PointAnnotation:
    image_id: str
    width: int
    height: int
    points: tuple[tuple[float, float, float], ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise AnnotationError(f"{self.image_id}: image size {self.width}×{self.height} is not positive")
        if not self.points:
            raise AnnotationError(f"{self.image_id}: annotation has no points")
        for x, y, w in self.points:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise AnnotationError(f"{self.image_id}: point ({x}, {y}) outside {self.width}×{self.height}")
            if not w > 0:
                raise AnnotationError(f"{self.image_id}: point weight {w} must be positive")


# --- manifests ---


def _choice(value: object, allowed: tuple[str, ...], key: str, line: int) -> str:
    if value not in allowed:
        raise ParseError(f"field '{key}' is {value!r}, expected one of {', '.join(allowed)}", line)
    return str(value)


def _parse_record(obj: object, line: int, base: Path) -> SampleRecord:
    if not isinstance(obj, dict):
        raise ParseError("each manifest line must be a JSON object", line)
    required = [k for k in MANIFEST_FIELDS if k not in ("gt_heatmap_path", "attributes")]
    missing = [k for k in required if k not in obj]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}", line)

    affordance = str(obj["affordance"])
    if not affordance or "," in affordance:
        raise ParseError(f"invalid affordance name {affordance!r}", line)
    attributes = obj.get("attributes") or []
    if not isinstance(attributes, list) or not all(isinstance(a, str) for a in attributes):
        raise ParseError("field 'attributes' must be a list of strings", line)
    unknown = sorted(set(attributes) - ATTRIBUTES)
    if unknown:
        raise ParseError(f"unknown attribute(s) {', '.join(map(str, unknown))}", line)

    if not isinstance(obj["image_path"], str) or not obj["image_path"]:
        raise ParseError(f"field 'image_path' must be a non-empty string, got {obj['image_path']!r}", line)
    gt = obj.get("gt_heatmap_path")
    if gt is not None and not isinstance(gt, str):
        raise ParseError(f"field 'gt_heatmap_path' must be a string or null, got {gt!r}", line)
    record = SampleRecord(
        id=str(obj["id"]),
        role=_choice(obj["role"], get_args(Role), "role", line),  # type: ignore[arg-type]
        affordance=affordance,
        object=str(obj["object"]),
        split=_choice(obj["split"], get_args(Split), "split", line),  # type: ignore[arg-type]
        seen_partition=_choice(obj["seen_partition"], get_args(Partition), "seen_partition", line),  # type: ignore[arg-type]
        image_path=str(base / obj["image_path"]),
        gt_heatmap_path=str(base / gt) if gt else None,
        attributes=tuple(attributes),
    )
    if record.is_test_ego and record.gt_heatmap_path is None:
        raise ParseError(f"test egocentric record '{record.id}' has no gt_heatmap_path", line)
    if record.split == "test" and record.gt_heatmap_path is not None:
        scales = [a for a in record.attributes if a in SCALES]
        if len(scales) != 1:
            raise ParseError(f"record '{record.id}' needs exactly one of Big/Middle/Small, got {scales}", line)
    return record


def load_manifest(path: Path | str) -> list[SampleRecord]:
    """Parse a JSON-lines manifest. Relative paths resolve against the manifest's directory."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    base = path.resolve().parent
    records: list[SampleRecord] = []
    seen_ids: set[tuple[str, str]] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line_number) from e
            record = _parse_record(obj, line_number, base)
            key = (record.id, record.role)
            if key in seen_ids:
                raise ParseError(f"duplicate {record.role} id '{record.id}'", line_number)
            seen_ids.add(key)
            records.append(record)
    log.info("Loaded %d records from %s", len(records), path)
    return records


def dump_manifest(records: Iterable[SampleRecord], path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.resolve().parent

    def rel(p: str | None) -> str | None:
        return None if p is None else Path(os.path.relpath(p, base)).as_posix()

    lines = []
    for record in records:
        row = asdict(record)
        row["image_path"] = rel(record.image_path)
        row["gt_heatmap_path"] = rel(record.gt_heatmap_path)
        row["attributes"] = list(record.attributes)
        lines.append(json.dumps({k: row[k] for k in MANIFEST_FIELDS}))
    path.write_text("".join(f"{line}\n" for line in lines), encoding="utf-8")
    return path


def select(
    records: Iterable[SampleRecord],
    *,
    role: Role | None = None,
    split: Split | None = None,
    partition: Partition | None = None,
) -> list[SampleRecord]:
    return [
        r for r in records
        if (role is None or r.role == role)
        and (split is None or r.split == split)
        and (partition is None or r.seen_partition == partition)
    ]


def affordance_classes(records: Iterable[SampleRecord]) -> list[str]:
    return sorted({r.affordance for r in records})


def head_tail_split(records: Sequence[SampleRecord]) -> dict[str, str]:
    """Classes up to and including the median class by image count are Head."""
    counts = Counter(r.affordance for r in records)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(counts.values())
    split: dict[str, str] = {}
    running = 0
    median_reached = False
    for name, count in ordered:
        split[name] = "Tail" if median_reached else "Head"
        running += count
        if 2 * running >= total:
            median_reached = True
    return split


# --- annotations and ground truth ---


def points_to_heatmap(ann: PointAnnotation, sigma: float | None = None, affordance: str = "") -> GroundingHeatmap:
    """Weighted sum of isotropic Gaussians at the annotated points, normalised to sum 1.

    ``x`` indexes columns and ``y`` rows. ``sigma`` defaults to 5% of the longer side.
    The sum is taken in log space, so a sigma far below one pixel still yields a
    distribution (all mass on the nearest pixels) instead of 0/0.
    """
    if sigma is None:
        sigma = 0.05 * max(ann.width, ann.height)
    if not sigma > 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    rows = np.arange(ann.height, dtype=np.float64)[:, None]
    cols = np.arange(ann.width, dtype=np.float64)[None, :]
    log_terms = np.stack([
        np.log(w) - ((cols - x) ** 2 + (rows - y) ** 2) / (2.0 * sigma * sigma) for x, y, w in ann.points
    ])
    log_map = logsumexp(log_terms, axis=0)
    log_map -= logsumexp(log_map)
    return GroundingHeatmap(map=np.exp(log_map), affordance=affordance, image_id=ann.image_id)


def load_annotations(path: Path | str) -> list[PointAnnotation]:
    """JSON lines of ``{"id", "width", "height", "points": [[x, y, w], ...]}``; ``w`` defaults to 1."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"annotation file not found: {path}")
    annotations = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                points = tuple(
                    (float(p[0]), float(p[1]), float(p[2]) if len(p) > 2 else 1.0) for p in obj["points"]
                )
                annotations.append(
                    PointAnnotation(str(obj["id"]), int(obj["width"]), int(obj["height"]), points)
                )
            except (json.JSONDecodeError, KeyError, TypeError, IndexError, ValueError) as e:
                if isinstance(e, AnnotationError):
                    raise ParseError(str(e), line_number) from e
                raise ParseError(f"invalid annotation: {e}", line_number) from e
    return annotations


def top_mass_mask(heatmap: np.ndarray, threshold_mass: float = 0.5) -> np.ndarray:
    """Smallest set of highest-valued pixels holding at least ``threshold_mass`` of the total."""
    flat = np.asarray(heatmap, dtype=np.float64).ravel()
    order = np.argsort(-flat, kind="stable")
    cumulative = np.cumsum(flat[order])
    target = threshold_mass * cumulative[-1] * (1.0 - 1e-12)
    k = min(int(np.searchsorted(cumulative, target, side="left")) + 1, flat.size)
    mask = np.zeros(flat.size, dtype=bool)
    mask[order[:k]] = True
    return mask.reshape(np.shape(heatmap))


def scale_split(gt_heatmap: np.ndarray, threshold_mass: float = 0.5) -> str:
    ratio = float(top_mass_mask(gt_heatmap, threshold_mass).mean())
    return scale_from_ratio(ratio)


def scale_from_ratio(ratio: float) -> str:
    if ratio > BIG_RATIO:
        return "Big"
    if ratio >= MIDDLE_RATIO:
        return "Middle"
    return "Small"


# --- images ---


def load_image(path: Path | str) -> np.ndarray:
    """8-bit RGB image as a 3×H×W float array in [-1, 1]."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise FormatError(f"cannot read image {path}: {e}") from e
    return pixels.transpose(2, 0, 1) / 127.5 - 1.0


def resize_image(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a c×H×W array to c×size×size."""
    _, h, w = image.shape
    if (h, w) == (size, size):
        return image
    return zoom(image, (1.0, size / h, size / w), order=1, grid_mode=False)


def random_crop_flip(
    image: np.ndarray,
    crop_source: int,
    size: int,
    rng: np.random.Generator,
    crop: bool = True,
    flip: bool = True,
) -> np.ndarray:
    if crop:
        image = resize_image(image, crop_source)
        top, left = rng.integers(0, crop_source - size + 1, size=2)
        image = image[:, top:top + size, left:left + size]
    else:
        image = resize_image(image, size)
    if flip and rng.random() < 0.5:
        image = image[:, :, ::-1]
    return np.ascontiguousarray(image)
